use std::path::PathBuf;

use thiserror::Error;

use crate::io::ply::PlyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("no views supplied")]
    NoViews,

    #[error("no Gaussian is visible from any view")]
    AllInvisible,

    #[error("Gaussian {index}: Gram matrix is not positive definite")]
    NotPositiveDefinite { index: usize },

    #[error("Gaussian {index}: total visibility {visibility} is below the solve threshold")]
    Underobserved { index: usize, visibility: f64 },

    #[error("refinement requires a factorized system for Gaussian {index}")]
    MissingFactorization { index: usize },

    #[error(transparent)]
    Ply(#[from] PlyError),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("camera manifest: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(
        what: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::AllInvisible
                | Error::Underobserved { .. }
                | Error::MissingFactorization { .. }
        )
    }
}
