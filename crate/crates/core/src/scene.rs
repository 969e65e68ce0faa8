//! Scene, camera, and image types shared by the renderer and the solver.
//!
//! Geometry (means, scales, rotations, opacities) is frozen once a scene is
//! built; only the spherical-harmonic coefficient bank is rewritten.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::sh::coeffs_per_channel;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Gaussian splat geometry plus per-channel SH coefficients.
///
/// Coefficients are stored Gaussian-major, then channel, then SH index:
/// `sh_coeffs[(i * channels + k) * M + m]` with `M = (sh_order + 1)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub means: Vec<Vector3<f64>>,
    pub scales: Vec<Vector3<f64>>,
    /// Stored as `(w, x, y, z)` quaternions; expected to be unit length.
    pub rotations: Vec<Quaternion<f64>>,
    /// Post-sigmoid opacity in `[0, 1]`.
    pub opacities: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
    pub sh_order: usize,
    pub channels: usize,
}

impl GaussianScene {
    /// Builds a scene with all SH coefficients set to zero.
    pub fn new(
        means: Vec<Vector3<f64>>,
        scales: Vec<Vector3<f64>>,
        rotations: Vec<Quaternion<f64>>,
        opacities: Vec<f64>,
        sh_order: usize,
        channels: usize,
    ) -> Result<Self> {
        let n = means.len();
        if scales.len() != n || rotations.len() != n || opacities.len() != n {
            return Err(Error::mismatch(
                "per-Gaussian attribute count",
                n,
                format!(
                    "scales {}, rotations {}, opacities {}",
                    scales.len(),
                    rotations.len(),
                    opacities.len()
                ),
            ));
        }
        if channels == 0 {
            return Err(Error::InvalidInput("scene needs at least one channel".into()));
        }
        let sh_coeffs = vec![0.0; n * channels * coeffs_per_channel(sh_order)];
        Ok(Self {
            means,
            scales,
            rotations,
            opacities,
            sh_coeffs,
            sh_order,
            channels,
        })
    }

    pub fn empty(sh_order: usize, channels: usize) -> Self {
        Self {
            means: Vec::new(),
            scales: Vec::new(),
            rotations: Vec::new(),
            opacities: Vec::new(),
            sh_coeffs: Vec::new(),
            sh_order,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// `(L + 1)²`
    pub fn coeffs_per_channel(&self) -> usize {
        coeffs_per_channel(self.sh_order)
    }

    /// All `K * (L + 1)²` coefficients of Gaussian `i`, channel-major.
    pub fn coeffs(&self, i: usize) -> &[f64] {
        let stride = self.channels * self.coeffs_per_channel();
        &self.sh_coeffs[i * stride..(i + 1) * stride]
    }

    pub fn coeffs_mut(&mut self, i: usize) -> &mut [f64] {
        let stride = self.channels * self.coeffs_per_channel();
        &mut self.sh_coeffs[i * stride..(i + 1) * stride]
    }

    /// Coefficient index of `c_i^{m,k}` in `sh_coeffs`.
    pub fn coeff_index(&self, i: usize, k: usize, m: usize) -> usize {
        let per = self.coeffs_per_channel();
        (i * self.channels + k) * per + m
    }

    pub fn reset_coeffs(&mut self) {
        self.sh_coeffs.iter_mut().for_each(|c| *c = 0.0);
    }

    /// Replaces the coefficient bank with one of a different order or
    /// channel count, zero-filled.
    pub fn with_color_layout(&self, sh_order: usize, channels: usize) -> Self {
        let mut scene = Self {
            sh_coeffs: Vec::new(),
            sh_order,
            channels,
            ..self.clone()
        };
        scene.sh_coeffs = vec![0.0; self.len() * channels * coeffs_per_channel(sh_order)];
        scene
    }

    /// Copies the Gaussians at `indices` (in order) into a new scene.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.sh_order, self.channels);
        for &i in indices {
            out.means.push(self.means[i]);
            out.scales.push(self.scales[i]);
            out.rotations.push(self.rotations[i]);
            out.opacities.push(self.opacities[i]);
            out.sh_coeffs.extend_from_slice(self.coeffs(i));
        }
        out
    }

    /// Covariance of Gaussian `i`.
    pub fn covariance(&self, i: usize) -> Result<Matrix3<f64>> {
        covariance_from_scale_rotation(&self.scales[i], &self.rotations[i])
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_scene(self)
    }
}

/// A failed scene invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// `None` for scene-level violations.
    pub gaussian: Option<usize>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    QuaternionNorm(f64),
    NonPositiveScale(Vector3<f64>),
    OpacityRange(f64),
    NonFinite(&'static str),
    CoefficientBank { expected: usize, found: usize },
    AttributeCount { attribute: &'static str, found: usize },
    ZeroChannels,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(i) = self.gaussian {
            write!(f, "Gaussian {i}: ")?;
        } else {
            write!(f, "scene: ")?;
        }
        match &self.kind {
            ViolationKind::QuaternionNorm(n) => write!(f, "quaternion norm {n} is not 1"),
            ViolationKind::NonPositiveScale(s) => {
                write!(f, "scale ({}, {}, {}) is not strictly positive", s.x, s.y, s.z)
            }
            ViolationKind::OpacityRange(o) => write!(f, "opacity {o} outside [0, 1]"),
            ViolationKind::NonFinite(what) => write!(f, "non-finite {what}"),
            ViolationKind::CoefficientBank { expected, found } => {
                write!(f, "SH bank holds {found} values, expected {expected}")
            }
            ViolationKind::AttributeCount { attribute, found } => {
                write!(f, "{found} {attribute} entries do not match the mean count")
            }
            ViolationKind::ZeroChannels => write!(f, "channel count is zero"),
        }
    }
}

/// Checks every [`GaussianScene`] invariant and reports each failure.
pub fn validate_scene(scene: &GaussianScene) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = scene.len();
    let scene_level = |kind| Violation {
        gaussian: None,
        kind,
    };
    if scene.channels == 0 {
        out.push(scene_level(ViolationKind::ZeroChannels));
    }
    for (attribute, found) in [
        ("scale", scene.scales.len()),
        ("rotation", scene.rotations.len()),
        ("opacity", scene.opacities.len()),
    ] {
        if found != n {
            out.push(scene_level(ViolationKind::AttributeCount { attribute, found }));
        }
    }
    let expected = n * scene.channels * scene.coeffs_per_channel();
    if scene.sh_coeffs.len() != expected {
        out.push(scene_level(ViolationKind::CoefficientBank {
            expected,
            found: scene.sh_coeffs.len(),
        }));
    }
    if !out.is_empty() {
        return out;
    }

    for i in 0..n {
        let mut push = |kind| {
            out.push(Violation {
                gaussian: Some(i),
                kind,
            })
        };
        if !scene.means[i].iter().all(|v| v.is_finite()) {
            push(ViolationKind::NonFinite("mean"));
        }
        let q = &scene.rotations[i];
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            push(ViolationKind::QuaternionNorm(norm));
        }
        let s = scene.scales[i];
        if !s.iter().all(|v| v.is_finite() && *v > 0.0) {
            push(ViolationKind::NonPositiveScale(s));
        }
        let o = scene.opacities[i];
        if !(0.0..=1.0).contains(&o) {
            push(ViolationKind::OpacityRange(o));
        }
        if !scene.coeffs(i).iter().all(|c| c.is_finite()) {
            push(ViolationKind::NonFinite("SH coefficient"));
        }
    }
    out
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(scale)`.
pub fn covariance_from_scale_rotation(
    scale: &Vector3<f64>,
    rotation: &Quaternion<f64>,
) -> Result<Matrix3<f64>> {
    if !scale.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scale ({}, {}, {}) must be strictly positive",
            scale.x, scale.y, scale.z
        )));
    }
    let r = UnitQuaternion::from_quaternion(*rotation).to_rotation_matrix();
    let m = r.matrix() * Matrix3::from_diagonal(scale);
    let cov = m * m.transpose();
    // Symmetrize exactly; the product is symmetric only up to rounding.
    Ok((cov + cov.transpose()) * 0.5)
}

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Camera space follows the usual computer-vision convention: `+x` right,
/// `+y` down, `+z` forward. Pixel `(x, y)` has its center at integer
/// coordinates, so a point on the optical axis lands on `(cx, cy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub world_to_camera: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraView {
    pub fn new(
        world_to_camera: Matrix4<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let view = Self {
            world_to_camera,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        view.validate()?;
        Ok(view)
    }

    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear upward in the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("look_at eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("look_at up is parallel to view".into()))?;
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut w2c = Matrix4::identity();
        w2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        w2c.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self::new(
            w2c,
            fx,
            fy,
            (width / 2) as f64,
            (height / 2) as f64,
            width,
            height,
        )
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation();
        let gram = r.transpose() * r;
        if !self.world_to_camera.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("camera pose has non-finite entries".into()));
        }
        if (gram - Matrix3::identity()).amax() > UNIT_TOLERANCE {
            return Err(Error::InvalidInput("camera rotation is not orthonormal".into()));
        }
        let bottom = self.world_to_camera.fixed_view::<1, 4>(3, 0);
        if (bottom - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).amax() > UNIT_TOLERANCE {
            return Err(Error::InvalidInput("camera pose last row must be (0, 0, 0, 1)".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image dimensions must be non-zero".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// `height × width × channels` raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ChannelImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::mismatch(
                "image data length",
                width * height * channels,
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("image value {pos} is not finite")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let at = (y * self.width + x) * self.channels;
        &self.data[at..at + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let at = (y * self.width + x) * self.channels;
        &mut self.data[at..at + self.channels]
    }

    pub fn same_shape(&self, other: &ChannelImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Errors unless the image matches the view's size and `channels`.
    pub fn check_dims(&self, view: &CameraView, channels: usize, what: &'static str) -> Result<()> {
        if self.width != view.width || self.height != view.height || self.channels != channels {
            return Err(Error::mismatch(
                what,
                format!("{}x{}x{}", view.width, view.height, channels),
                format!("{}x{}x{}", self.width, self.height, self.channels),
            ));
        }
        Ok(())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ChannelImage) -> ChannelImage {
        debug_assert!(self.same_shape(other));
        ChannelImage {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            ..*self
        }
    }

    pub fn scaled(&self, factor: f64) -> ChannelImage {
        ChannelImage {
            data: self.data.iter().map(|a| a * factor).collect(),
            ..*self
        }
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: f64, other: &ChannelImage, b: f64) -> ChannelImage {
        debug_assert!(self.same_shape(other));
        ChannelImage {
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect(),
            ..*self
        }
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> ChannelImage {
        ChannelImage {
            data: self.data.iter().map(|v| v.clamp(lo, hi)).collect(),
            ..*self
        }
    }

    pub fn dot(&self, other: &ChannelImage) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}
