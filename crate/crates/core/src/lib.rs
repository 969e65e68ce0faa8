//! Closed-form spherical-harmonic colorization of Gaussian splat scenes.
//!
//! With geometry frozen, a rendered pixel is linear in every splat's SH
//! coefficients. Each splat therefore gets a small weighted least-squares
//! problem whose normal matrix is assembled from per-view visibilities and
//! factored once; a few residual refinement steps then account for the
//! coupling between overlapping splats.

pub mod adjoint;
pub mod baseline;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod raster;
pub mod scene;
pub mod sh;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use metrics::ImageMetrics;
pub use raster::{render, Frame, RasterConfig};
pub use scene::{CameraView, ChannelImage, GaussianScene};
pub use solver::{colorize, colorize_and_refine, refine, segment, SolveConfig, SolveReport};
