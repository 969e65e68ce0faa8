//! Scene, camera, and image file formats.

pub mod cameras;
pub mod image;
pub mod ply;

pub use cameras::{read_cameras, write_cameras, CameraEntry, CameraSet};
pub use image::{read_image, write_image};
pub use ply::{read_ply, write_ply, PlyError};
