//! Seeded synthetic fixtures: a random scene, cameras on a sphere looking
//! at the origin, and the images the scene renders from them.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, CameraEntry, CameraSet};
use crate::raster::{render, RasterConfig};
use crate::scene::{CameraView, ChannelImage, GaussianScene};
use crate::sh::{band_of, coeffs_per_channel, SH_C0};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub splats: usize,
    pub views: usize,
    /// Every `held_out_stride`-th view (counting from the last of each
    /// group) is held out; 0 holds none out.
    pub held_out_stride: usize,
    pub sh_order: usize,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Means are drawn uniformly inside a ball of this radius.
    pub extent: f64,
    pub camera_distance: f64,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Range of the displayed base color per channel.
    pub base_color: (f64, f64),
    /// Coefficients of band `b ≥ 1` are uniform in `±amplitude / b`.
    pub view_dependence: f64,
    /// Log-uniform axis scale range.
    pub scale: (f64, f64),
    pub opacity: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            splats: 200,
            views: 40,
            held_out_stride: 5,
            sh_order: 3,
            channels: 3,
            width: 64,
            height: 64,
            extent: 1.0,
            camera_distance: 4.0,
            fov_deg: 40.0,
            base_color: (0.2, 0.8),
            view_dependence: 0.15,
            scale: (0.04, 0.12),
            opacity: (0.3, 0.95),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthFixture {
    /// Scene with the coefficients that produced the targets.
    pub scene: GaussianScene,
    pub train_views: Vec<CameraView>,
    pub train_targets: Vec<ChannelImage>,
    pub test_views: Vec<CameraView>,
    pub test_targets: Vec<ChannelImage>,
}

/// `n` nearly uniform unit vectors (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Cameras at `distance · dirs[i]` looking at the origin.
pub fn cameras_looking_at_origin(
    dirs: &[Vector3<f64>],
    distance: f64,
    fov_deg: f64,
    width: usize,
    height: usize,
) -> Result<Vec<CameraView>> {
    let focal = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
    dirs.iter()
        .map(|d| {
            let up = if d.z.abs() > 0.99 {
                Vector3::y()
            } else {
                Vector3::z()
            };
            CameraView::look_at(d * distance, Vector3::zeros(), up, focal, focal, width, height)
        })
        .collect()
}

fn uniform_quaternion(rng: &mut impl Rng) -> Quaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Quaternion::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    )
}

/// Random scene with geometry and coefficients drawn from `config`.
pub fn random_scene(config: &SynthConfig, rng: &mut impl Rng) -> Result<GaussianScene> {
    let n = config.splats;
    let mut means = Vec::with_capacity(n);
    while means.len() < n {
        let p = Vector3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        if p.norm_squared() <= 1.0 {
            means.push(p * config.extent);
        }
    }
    let (lo, hi) = (config.scale.0.ln(), config.scale.1.ln());
    let scales = (0..n)
        .map(|_| Vector3::from_fn(|_, _| rng.gen_range(lo..=hi).exp()))
        .collect();
    let rotations = (0..n).map(|_| uniform_quaternion(rng)).collect();
    let opacities = (0..n)
        .map(|_| rng.gen_range(config.opacity.0..=config.opacity.1))
        .collect();
    let mut scene = GaussianScene::new(
        means,
        scales,
        rotations,
        opacities,
        config.sh_order,
        config.channels,
    )?;
    let per = coeffs_per_channel(config.sh_order);
    for c in scene.sh_coeffs.chunks_exact_mut(per) {
        c[0] = rng.gen_range(config.base_color.0..=config.base_color.1) / SH_C0;
        for (m, v) in c.iter_mut().enumerate().skip(1) {
            let a = config.view_dependence / band_of(m) as f64;
            *v = rng.gen_range(-a..=a);
        }
    }
    Ok(scene)
}

pub fn generate(config: &SynthConfig, raster: &RasterConfig) -> Result<SynthFixture> {
    if config.splats == 0 || config.views == 0 {
        return Err(Error::InvalidInput("synthetic fixture needs splats and views".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scene = random_scene(config, &mut rng)?;
    let views = cameras_looking_at_origin(
        &fibonacci_sphere(config.views),
        config.camera_distance,
        config.fov_deg,
        config.width,
        config.height,
    )?;
    let mut fixture = SynthFixture {
        scene,
        train_views: Vec::new(),
        train_targets: Vec::new(),
        test_views: Vec::new(),
        test_targets: Vec::new(),
    };
    for (i, view) in views.into_iter().enumerate() {
        let image = render(&fixture.scene, &view, raster)?;
        let s = config.held_out_stride;
        if s > 0 && i % s == s - 1 {
            fixture.test_views.push(view);
            fixture.test_targets.push(image);
        } else {
            fixture.train_views.push(view);
            fixture.train_targets.push(image);
        }
    }
    Ok(fixture)
}

/// Writes `scene.ply`, `train.json`, `test.json` and the target images
/// (raw float, so they reload bit-exactly) under `dir/images`.
pub fn write_fixture(fixture: &SynthFixture, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    io::write_ply(&fixture.scene, dir.join("scene.ply"))?;
    for (name, views, targets) in [
        ("train", &fixture.train_views, &fixture.train_targets),
        ("test", &fixture.test_views, &fixture.test_targets),
    ] {
        let mut set = CameraSet::default();
        for (i, (view, target)) in views.iter().zip(targets).enumerate() {
            let id = format!("{name}_{i:03}");
            let image = format!("{id}.{}", io::image::RAW_EXTENSION);
            io::write_image(target, images.join(&image), false)?;
            set.entries.push(CameraEntry {
                id,
                view: view.clone(),
                image,
            });
        }
        io::write_cameras(&set, dir.join(format!("{name}.json")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_are_unit_and_spread() {
        let pts = fibonacci_sphere(40);
        assert!(pts.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
        let centroid: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / 40.0;
        assert!(centroid.norm() < 0.05);
    }

    #[test]
    fn cameras_see_the_origin_centered() {
        let views = cameras_looking_at_origin(&fibonacci_sphere(10), 4.0, 40.0, 64, 48).unwrap();
        for v in views {
            let p = v.to_camera(&Vector3::zeros());
            assert!((p.x).abs() < 1e-9 && (p.y).abs() < 1e-9);
            assert!((p.z - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig {
            splats: 20,
            views: 5,
            width: 16,
            height: 16,
            ..Default::default()
        };
        let raster = RasterConfig::default();
        let a = generate(&cfg, &raster).unwrap();
        let b = generate(&cfg, &raster).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.train_targets, b.train_targets);
        assert_eq!((a.train_views.len(), a.test_views.len()), (4, 1));
        let c = generate(&SynthConfig { seed: 1, ..cfg }, &raster).unwrap();
        assert_ne!(a.scene, c.scene);
        assert!(a.scene.validate().is_empty());
    }

    #[test]
    fn fixture_files_reload() {
        let cfg = SynthConfig {
            splats: 10,
            views: 3,
            width: 12,
            height: 10,
            ..Default::default()
        };
        let fixture = generate(&cfg, &RasterConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_fixture(&fixture, dir.path()).unwrap();
        let set = io::read_cameras(dir.path().join("train.json")).unwrap();
        assert_eq!(set.views(), fixture.train_views);
        let images = set.load_images(&dir.path().join("images")).unwrap();
        assert_eq!(images, fixture.train_targets);
    }
}
