//! Camera manifest: a JSON list of posed views.
//!
//! ```json
//! {
//!   "version": 1,
//!   "views": [
//!     {
//!       "id": "view_000",
//!       "width": 64, "height": 64,
//!       "fx": 60.0, "fy": 60.0, "cx": 32.0, "cy": 32.0,
//!       "world_to_camera": [[1,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]],
//!       "image": "view_000.png"
//!     }
//!   ]
//! }
//! ```
//!
//! `world_to_camera` is row-major; camera space is `+x` right, `+y` down,
//! `+z` forward.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::image::read_image;
use crate::scene::{CameraView, ChannelImage};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    views: Vec<ManifestView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestView {
    id: String,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    world_to_camera: [[f64; 4]; 4],
    image: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraEntry {
    pub id: String,
    pub view: CameraView,
    /// Image file name, relative to the image directory.
    pub image: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraSet {
    pub entries: Vec<CameraEntry>,
}

impl CameraSet {
    pub fn views(&self) -> Vec<CameraView> {
        self.entries.iter().map(|e| e.view.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text)?;
        if file.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported version {}", file.version)));
        }
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(file.views.len());
        for v in file.views {
            if !seen.insert(v.id.clone()) {
                return Err(Error::Manifest(format!("duplicate view id {:?}", v.id)));
            }
            let w2c = Matrix4::from_fn(|r, c| v.world_to_camera[r][c]);
            let view = CameraView::new(w2c, v.fx, v.fy, v.cx, v.cy, v.width, v.height)
                .map_err(|e| Error::Manifest(format!("view {}: {e}", v.id)))?;
            entries.push(CameraEntry {
                id: v.id,
                view,
                image: v.image,
            });
        }
        Ok(Self { entries })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ManifestFile {
            version: MANIFEST_VERSION,
            views: self
                .entries
                .iter()
                .map(|e| ManifestView {
                    id: e.id.clone(),
                    width: e.view.width,
                    height: e.view.height,
                    fx: e.view.fx,
                    fy: e.view.fy,
                    cx: e.view.cx,
                    cy: e.view.cy,
                    world_to_camera: std::array::from_fn(|r| {
                        std::array::from_fn(|c| e.view.world_to_camera[(r, c)])
                    }),
                    image: e.image.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Errors naming the first view whose image is missing from `dir`.
    pub fn check_images(&self, dir: &Path) -> Result<()> {
        for e in &self.entries {
            if !dir.join(&e.image).is_file() {
                return Err(Error::Manifest(format!(
                    "view {}: image {} not found in {}",
                    e.id,
                    e.image,
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    /// Loads every view's image from `dir`, checking its size.
    pub fn load_images(&self, dir: &Path) -> Result<Vec<ChannelImage>> {
        self.check_images(dir)?;
        self.entries
            .iter()
            .map(|e| {
                let img = read_image(dir.join(&e.image))?;
                if img.width != e.view.width || img.height != e.view.height {
                    return Err(Error::Manifest(format!(
                        "view {}: image is {}x{}, camera expects {}x{}",
                        e.id, img.width, img.height, e.view.width, e.view.height
                    )));
                }
                Ok(img)
            })
            .collect()
    }
}

pub fn read_cameras(path: impl AsRef<Path>) -> Result<CameraSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CameraSet::from_json(&text)
}

pub fn write_cameras(set: &CameraSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, set.to_json()?).map_err(|e| Error::io(path, e))
}
