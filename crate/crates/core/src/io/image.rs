//! PNG and raw float image files.
//!
//! PNG samples (8- or 16-bit) map linearly onto `[0, 1]`; no gamma curve is
//! applied in either direction. Multi-channel or signed data such as feature
//! maps use the raw float container:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPLF"
//! 4       4     version (u32, = 1)
//! 8       4     width (u32)
//! 12      4     height (u32)
//! 16      4     channels (u32)
//! 20      4     bytes per sample (u32, 4 = f32, 8 = f64)
//! 24      ...   samples, little-endian, row-major, channels interleaved
//! ```

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, LumaA, Rgb, Rgba};

use crate::error::{Error, Result};
use crate::scene::ChannelImage;

pub const RAW_MAGIC: &[u8; 4] = b"SPLF";
pub const RAW_VERSION: u32 = 1;
pub const RAW_EXTENSION: &str = "splf";
const RAW_HEADER: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

fn image_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Reads a `.png` or raw float (`.splf`) image.
pub fn read_image(path: impl AsRef<Path>) -> Result<ChannelImage> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "png" => read_png(path),
        RAW_EXTENSION => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_raw(&bytes).map_err(|m| image_error(path, m))
        }
        other => Err(image_error(path, format!("unsupported image format {other:?}"))),
    }
}

/// Writes a `.png` (16-bit) or raw float (`.splf`, 64-bit) image. PNG output
/// needs values in `[0, 1]`; pass `clamp` to clip them first.
pub fn write_image(image: &ChannelImage, path: impl AsRef<Path>, clamp: bool) -> Result<()> {
    let path = path.as_ref();
    let image = if clamp {
        image.clamped(0.0, 1.0)
    } else {
        image.clone()
    };
    match extension(path).as_str() {
        "png" => write_png(&image, path),
        RAW_EXTENSION => std::fs::write(path, encode_raw(&image, Precision::F64))
            .map_err(|e| Error::io(path, e)),
        other => Err(image_error(path, format!("unsupported image format {other:?}"))),
    }
}

fn read_png(path: &Path) -> Result<ChannelImage> {
    let decoded = image::open(path).map_err(|e| image_error(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match decoded {
        DynamicImage::ImageLuma8(b) => (1, scale8(b.into_raw())),
        DynamicImage::ImageLumaA8(b) => (2, scale8(b.into_raw())),
        DynamicImage::ImageRgb8(b) => (3, scale8(b.into_raw())),
        DynamicImage::ImageRgba8(b) => (4, scale8(b.into_raw())),
        DynamicImage::ImageLuma16(b) => (1, scale16(b.into_raw())),
        DynamicImage::ImageLumaA16(b) => (2, scale16(b.into_raw())),
        DynamicImage::ImageRgb16(b) => (3, scale16(b.into_raw())),
        DynamicImage::ImageRgba16(b) => (4, scale16(b.into_raw())),
        other => {
            return Err(image_error(path, format!("unsupported PNG layout {:?}", other.color())))
        }
    };
    ChannelImage::from_vec(w, h, channels, data)
}

fn scale8(raw: Vec<u8>) -> Vec<f64> {
    raw.into_iter().map(|v| v as f64 / 255.0).collect()
}

fn scale16(raw: Vec<u16>) -> Vec<f64> {
    raw.into_iter().map(|v| v as f64 / 65535.0).collect()
}

fn write_png(image: &ChannelImage, path: &Path) -> Result<()> {
    if let Some(v) = image.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(image_error(
            path,
            format!("value {v} outside [0, 1]; write with clamping for display"),
        ));
    }
    let (w, h) = (image.width as u32, image.height as u32);
    let samples: Vec<u16> = image
        .data
        .iter()
        .map(|v| (v * 65535.0).round() as u16)
        .collect();
    let bad_size = || image_error(path, "buffer size mismatch");
    let dynamic = match image.channels {
        1 => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, samples).ok_or_else(bad_size)?,
        ),
        2 => DynamicImage::ImageLumaA16(
            ImageBuffer::<LumaA<u16>, _>::from_raw(w, h, samples).ok_or_else(bad_size)?,
        ),
        3 => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, samples).ok_or_else(bad_size)?,
        ),
        4 => DynamicImage::ImageRgba16(
            ImageBuffer::<Rgba<u16>, _>::from_raw(w, h, samples).ok_or_else(bad_size)?,
        ),
        k => {
            return Err(image_error(
                path,
                format!("PNG cannot hold {k} channels; use the .{RAW_EXTENSION} container"),
            ))
        }
    };
    dynamic
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e.to_string()))
}

pub fn encode_raw(image: &ChannelImage, precision: Precision) -> Vec<u8> {
    let sample = match precision {
        Precision::F32 => 4u32,
        Precision::F64 => 8u32,
    };
    let mut out = Vec::with_capacity(RAW_HEADER + image.data.len() * sample as usize);
    out.extend_from_slice(RAW_MAGIC);
    for v in [
        RAW_VERSION,
        image.width as u32,
        image.height as u32,
        image.channels as u32,
        sample,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &image.data {
        match precision {
            Precision::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode_raw(bytes: &[u8]) -> std::result::Result<ChannelImage, String> {
    if bytes.len() < RAW_HEADER {
        return Err(format!("header needs {RAW_HEADER} bytes, found {}", bytes.len()));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err("bad magic".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, w, h, k, sample) = (word(0), word(1), word(2), word(3), word(4));
    if version != RAW_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = w as usize * h as usize * k as usize;
    let payload = &bytes[RAW_HEADER..];
    let expected = count * sample as usize;
    if payload.len() != expected {
        return Err(format!("payload holds {} bytes, expected {expected}", payload.len()));
    }
    let data: Vec<f64> = match sample {
        4 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        8 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        other => return Err(format!("unsupported sample size {other}")),
    };
    ChannelImage::from_vec(w as usize, h as usize, k as usize, data).map_err(|e| e.to_string())
}
