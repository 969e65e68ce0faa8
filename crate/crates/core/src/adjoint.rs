//! Analytic derivatives of rendered image sums with respect to SH
//! coefficients.
//!
//! Every pixel is linear in the coefficients of every splat it blends:
//! `∂img/∂c_i^m = T_i α_i Y_m(d_i)`. Summing `T·α` over a view therefore
//! gives the splat's visibility directly, the same sum weighted by a target
//! image gives the numerator of its visibility-weighted target color, and
//! the per-coefficient derivative factors into visibility times the basis
//! value at the splat's view direction.

use crate::error::{Error, Result};
use crate::raster::{Frame, RasterConfig};
use crate::scene::{CameraView, ChannelImage, GaussianScene};

/// Visibility below which a Gaussian counts as unseen by a view.
pub const VISIBILITY_EPSILON: f64 = 1e-8;

/// Per-view, per-Gaussian blend statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewAccumulators {
    /// `Σ_{x,y} T·α` per Gaussian.
    pub visibility: Vec<f64>,
    /// `Σ_{x,y} T·α·target(x, y, k)`, laid out `N_g × K`.
    pub weighted_target: Vec<f64>,
    /// `Y_m(d)` at the splat's view direction, laid out `N_g × (L+1)²`.
    /// Zero rows for Gaussians the view does not project.
    pub basis_rows: Vec<f64>,
    pub channels: usize,
    pub coeffs_per_channel: usize,
}

impl ViewAccumulators {
    pub fn gaussian_count(&self) -> usize {
        self.visibility.len()
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        &self.basis_rows[i * self.coeffs_per_channel..(i + 1) * self.coeffs_per_channel]
    }

    pub fn weighted(&self, i: usize) -> &[f64] {
        &self.weighted_target[i * self.channels..(i + 1) * self.channels]
    }
}

/// Visibility, target-weighted visibility, and basis rows of one view.
pub fn accumulate_view(
    scene: &GaussianScene,
    view: &CameraView,
    config: &RasterConfig,
    target: &ChannelImage,
) -> Result<ViewAccumulators> {
    target.check_dims(view, scene.channels, "target image")?;
    let frame = Frame::new(scene, view, config)?;
    accumulate_frame(&frame, scene, target)
}

/// [`accumulate_view`] on an already prepared frame.
pub fn accumulate_frame(
    frame: &Frame,
    scene: &GaussianScene,
    target: &ChannelImage,
) -> Result<ViewAccumulators> {
    check_frame_image(frame, scene, target, "target image")?;
    let (visibility, weighted_target) = frame.blend_sums(Some(target));
    let per = scene.coeffs_per_channel();
    let mut basis_rows = vec![0.0; scene.len() * per];
    for s in &frame.splats {
        basis_rows[s.gaussian_index * per..][..per].copy_from_slice(s.basis.values());
    }
    Ok(ViewAccumulators {
        visibility,
        weighted_target,
        basis_rows,
        channels: scene.channels,
        coeffs_per_channel: per,
    })
}

/// Only the `Σ T·α·target` numerators; geometry-only terms are skipped.
pub fn weighted_target_frame(
    frame: &Frame,
    scene: &GaussianScene,
    target: &ChannelImage,
) -> Result<Vec<f64>> {
    check_frame_image(frame, scene, target, "target image")?;
    Ok(frame.blend_sums(Some(target)).1)
}

fn check_frame_image(
    frame: &Frame,
    scene: &GaussianScene,
    image: &ChannelImage,
    what: &'static str,
) -> Result<()> {
    if image.width != frame.width || image.height != frame.height || image.channels != scene.channels
    {
        return Err(Error::mismatch(
            what,
            format!("{}x{}x{}", frame.width, frame.height, scene.channels),
            format!("{}x{}x{}", image.width, image.height, image.channels),
        ));
    }
    if frame.gaussian_count() != scene.len() {
        return Err(Error::mismatch(
            "scene size for prepared frame",
            frame.gaussian_count(),
            scene.len(),
        ));
    }
    Ok(())
}

/// Visibility-weighted mean target color of Gaussian `i`, or `None` when the
/// view does not see it.
pub fn target_color(acc: &ViewAccumulators, i: usize) -> Option<Vec<f64>> {
    let v = acc.visibility[i];
    (v > VISIBILITY_EPSILON).then(|| acc.weighted(i).iter().map(|w| w / v).collect())
}

/// Gradient of `Σ_{x,y,k} residual²` with respect to every coefficient,
/// where `residual = render − target` is held as given. Laid out like
/// [`GaussianScene::sh_coeffs`].
pub fn gradient_pass(
    scene: &GaussianScene,
    view: &CameraView,
    config: &RasterConfig,
    residual: &ChannelImage,
) -> Result<Vec<f64>> {
    residual.check_dims(view, scene.channels, "residual image")?;
    let frame = Frame::new(scene, view, config)?;
    gradient_frame(&frame, scene, residual)
}

/// [`gradient_pass`] on an already prepared frame.
pub fn gradient_frame(
    frame: &Frame,
    scene: &GaussianScene,
    residual: &ChannelImage,
) -> Result<Vec<f64>> {
    check_frame_image(frame, scene, residual, "residual image")?;
    let k = scene.channels;
    let per = scene.coeffs_per_channel();
    let (_, weighted) = frame.blend_sums(Some(residual));
    let mut grad = vec![0.0; scene.sh_coeffs.len()];
    for s in &frame.splats {
        let i = s.gaussian_index;
        for c in 0..k {
            let r = 2.0 * weighted[i * k + c];
            let out = &mut grad[(i * k + c) * per..][..per];
            for (g, y) in out.iter_mut().zip(s.basis.values()) {
                *g = r * y;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::render;
    use crate::sh::SH_C0;
    use nalgebra::{Matrix4, Quaternion, Vector3};

    fn view(size: usize) -> CameraView {
        CameraView::new(
            Matrix4::identity(),
            30.0,
            30.0,
            (size / 2) as f64,
            (size / 2) as f64,
            size,
            size,
        )
        .unwrap()
    }

    fn scene(opacity: f64, order: usize, channels: usize) -> GaussianScene {
        let mut s = GaussianScene::new(
            vec![Vector3::new(0.0, 0.0, 3.0)],
            vec![Vector3::repeat(0.15)],
            vec![Quaternion::identity()],
            vec![opacity],
            order,
            channels,
        )
        .unwrap();
        for (n, c) in s.sh_coeffs.iter_mut().enumerate() {
            *c = 0.1 * n as f64 + 0.5;
        }
        s
    }

    #[test]
    fn constant_target_weight_equals_visibility() {
        let s = scene(0.8, 1, 3);
        let v = view(32);
        let acc = accumulate_view(&s, &v, &RasterConfig::default(), &ChannelImage::filled(32, 32, 3, 1.0))
            .unwrap();
        assert!(acc.visibility[0] > 0.0);
        for k in 0..3 {
            assert!((acc.weighted(0)[k] - acc.visibility[0]).abs() < 1e-12);
        }
        assert_eq!(acc.basis_row(0)[0], SH_C0);
    }

    #[test]
    fn visibility_is_total_alpha_mass() {
        let s = scene(1.0, 0, 1);
        let v = view(32);
        let cfg = RasterConfig::default();
        let acc = accumulate_view(&s, &v, &cfg, &ChannelImage::zeros(32, 32, 1)).unwrap();
        let frame = Frame::new(&s, &v, &cfg).unwrap();
        let sp = &frame.splats[0];
        let mut mass = 0.0;
        for y in 0..32 {
            for x in 0..32 {
                if let Some(a) = sp.alpha_at(x as f64, y as f64, &cfg) {
                    mass += a;
                }
            }
        }
        assert!((acc.visibility[0] - mass).abs() < 1e-12 * mass);
        assert_eq!(acc.weighted(0), &[0.0]);
    }

    #[test]
    fn target_color_guards_invisible() {
        let acc = ViewAccumulators {
            visibility: vec![0.0, 4.0],
            weighted_target: vec![1.0, 3.0],
            basis_rows: vec![SH_C0, SH_C0],
            channels: 1,
            coeffs_per_channel: 1,
        };
        assert_eq!(target_color(&acc, 0), None);
        assert_eq!(target_color(&acc, 1), Some(vec![0.75]));
    }

    #[test]
    fn gradient_examples() {
        let s = scene(0.7, 0, 1);
        let v = view(16);
        let cfg = RasterConfig::default();
        let zero = ChannelImage::zeros(16, 16, 1);
        assert!(gradient_pass(&s, &v, &cfg, &zero).unwrap().iter().all(|g| *g == 0.0));

        let residual = render(&s, &v, &cfg).unwrap();
        let grad = gradient_pass(&s, &v, &cfg, &residual).unwrap();
        let acc = accumulate_view(&s, &v, &cfg, &residual).unwrap();
        assert!((grad[0] - 2.0 * acc.weighted(0)[0] * SH_C0).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = scene(0.7, 0, 2);
        let v = view(16);
        let cfg = RasterConfig::default();
        assert!(accumulate_view(&s, &v, &cfg, &ChannelImage::zeros(16, 16, 1)).is_err());
        assert!(gradient_pass(&s, &v, &cfg, &ChannelImage::zeros(8, 16, 2)).is_err());
    }
}
