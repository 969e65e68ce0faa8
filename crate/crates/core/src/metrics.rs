//! Image error metrics with a peak value of 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::ChannelImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    /// Mean absolute error.
    pub l1: f64,
    /// Mean squared error.
    pub l2: f64,
    /// `−10 log10(l2)`; infinite for identical images.
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
}

impl ImageMetrics {
    pub fn compare(rendered: &ChannelImage, reference: &ChannelImage) -> Result<Self> {
        if !rendered.same_shape(reference) {
            return Err(Error::mismatch(
                "compared images",
                format!("{}x{}x{}", reference.width, reference.height, reference.channels),
                format!("{}x{}x{}", rendered.width, rendered.height, rendered.channels),
            ));
        }
        let n = rendered.data.len().max(1) as f64;
        let (mut l1, mut l2) = (0.0, 0.0);
        for (a, b) in rendered.data.iter().zip(&reference.data) {
            let d = a - b;
            l1 += d.abs();
            l2 += d * d;
        }
        let (l1, l2) = (l1 / n, l2 / n);
        Ok(Self {
            l1,
            l2,
            psnr: psnr_from_mse(l2),
        })
    }

    /// Averages L1 and L2; PSNR is recomputed from the mean L2 rather than
    /// averaged.
    pub fn mean(all: &[ImageMetrics]) -> Self {
        let n = all.len().max(1) as f64;
        let l1 = all.iter().map(|m| m.l1).sum::<f64>() / n;
        let l2 = all.iter().map(|m| m.l2).sum::<f64>() / n;
        Self {
            l1,
            l2,
            psnr: psnr_from_mse(l2),
        }
    }

    /// Mean of the per-image PSNR values.
    pub fn mean_psnr(all: &[ImageMetrics]) -> f64 {
        all.iter().map(|m| m.psnr).sum::<f64>() / all.len().max(1) as f64
    }
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Formats a PSNR, using `inf` for identical images.
pub fn format_psnr(psnr: f64) -> String {
    if psnr.is_infinite() {
        "inf".to_string()
    } else {
        format!("{psnr:.4}")
    }
}

mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR {s}"))),
        }
    }
}
