//! Shared test support: a per-pixel reference renderer written directly
//! from the compositing definition, plus small fixture builders.
//!
//! The reference renderer deliberately shares nothing with the tiled
//! implementation except the SH basis: it projects every Gaussian from
//! scratch, sorts once, and walks every Gaussian at every pixel.

#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, Matrix4, Quaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splat_colorize::sh::{coeffs_per_channel, sh_basis};
use splat_colorize::synth::{self, SynthConfig};
use splat_colorize::{CameraView, ChannelImage, GaussianScene, RasterConfig};

pub struct Reference {
    pub image: ChannelImage,
    /// `Σ T·α` per Gaussian.
    pub visibility: Vec<f64>,
    /// `Σ T·α·weights`, `N × K`; zeros when no weights were given.
    pub weighted: Vec<f64>,
}

struct Projected {
    index: usize,
    depth: f64,
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: Vec<f64>,
}

fn rotation_from_quaternion(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n = (q.w * q.w + q.i * q.i + q.j * q.j + q.k * q.k).sqrt();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn project_all(scene: &GaussianScene, view: &CameraView, cfg: &RasterConfig) -> Vec<Projected> {
    let m: Matrix4<f64> = view.world_to_camera;
    let w = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t = m.fixed_view::<3, 1>(0, 3).into_owned();
    let center = -(w.transpose() * t);
    let per = coeffs_per_channel(scene.sh_order);
    let mut out = Vec::new();
    for i in 0..scene.len() {
        let p = w * scene.means[i] + t;
        if p.z <= cfg.near_plane {
            continue;
        }
        let r = rotation_from_quaternion(&scene.rotations[i]);
        let s2 = Matrix3::from_diagonal(&scene.scales[i].component_mul(&scene.scales[i]));
        let sigma = r * s2 * r.transpose();
        let jac = nalgebra::Matrix2x3::new(
            view.fx / p.z,
            0.0,
            -view.fx * p.x / (p.z * p.z),
            0.0,
            view.fy / p.z,
            -view.fy * p.y / (p.z * p.z),
        );
        let cov = jac * w * sigma * w.transpose() * jac.transpose() + Matrix2::identity() * 0.3;
        let Some(conic) = cov.try_inverse() else {
            continue;
        };
        if cov.determinant() <= 0.0 {
            continue;
        }
        let dir = (scene.means[i] - center).normalize();
        let basis = sh_basis(scene.sh_order, &dir).unwrap();
        let color = (0..scene.channels)
            .map(|k| {
                let c = &scene.sh_coeffs[(i * scene.channels + k) * per..][..per];
                c.iter().zip(basis.values()).map(|(a, b)| a * b).sum()
            })
            .collect();
        out.push(Projected {
            index: i,
            depth: p.z,
            mean: Vector2::new(view.fx * p.x / p.z + view.cx, view.fy * p.y / p.z + view.cy),
            conic,
            opacity: scene.opacities[i],
            color,
        });
    }
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    out
}

/// Renders and accumulates per-Gaussian sums one pixel at a time.
pub fn reference_pass(
    scene: &GaussianScene,
    view: &CameraView,
    cfg: &RasterConfig,
    weights: Option<&ChannelImage>,
) -> Reference {
    let k = scene.channels;
    let splats = project_all(scene, view, cfg);
    let mut image = ChannelImage::zeros(view.width, view.height, k);
    let mut visibility = vec![0.0; scene.len()];
    let mut weighted = vec![0.0; scene.len() * k];
    let sigma2 = cfg.footprint_sigma * cfg.footprint_sigma;
    for y in 0..view.height {
        for x in 0..view.width {
            let mut trans = 1.0;
            for s in &splats {
                let d = Vector2::new(x as f64, y as f64) - s.mean;
                let q = (d.transpose() * s.conic * d)[(0, 0)];
                if q > sigma2 {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * q).exp()).min(cfg.alpha_max);
                if alpha < cfg.alpha_min {
                    continue;
                }
                let tw = trans * alpha;
                visibility[s.index] += tw;
                let px = image.pixel_mut(x, y);
                for c in 0..k {
                    px[c] += tw * s.color[c];
                }
                if let Some(w) = weights {
                    for c in 0..k {
                        weighted[s.index * k + c] += tw * w.pixel(x, y)[c];
                    }
                }
                trans *= 1.0 - alpha;
                if trans < cfg.transmittance_floor {
                    break;
                }
            }
        }
    }
    Reference {
        image,
        visibility,
        weighted,
    }
}

/// `max |a − b| / max(max |b|, floor)`.
pub fn max_rel_diff(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Seeded synthetic scene and views with no held-out split.
pub fn synthetic(
    splats: usize,
    views: usize,
    size: usize,
    sh_order: usize,
    seed: u64,
) -> synth::SynthFixture {
    let cfg = SynthConfig {
        splats,
        views,
        held_out_stride: 0,
        sh_order,
        width: size,
        height: size,
        seed,
        ..Default::default()
    };
    synth::generate(&cfg, &RasterConfig::default()).unwrap()
}

pub fn random_image(w: usize, h: usize, k: usize, seed: u64) -> ChannelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ChannelImage::from_vec(w, h, k, data).unwrap()
}

/// Two translucent splats that overlap on screen from every view.
pub fn overlapping_pair(order: usize) -> (GaussianScene, Vec<CameraView>, Vec<ChannelImage>) {
    let mut scene = GaussianScene::new(
        vec![Vector3::new(-0.12, 0.0, 0.05), Vector3::new(0.12, 0.03, -0.05)],
        vec![Vector3::new(0.25, 0.18, 0.2), Vector3::new(0.2, 0.22, 0.16)],
        vec![Quaternion::identity(), Quaternion::new(0.9, 0.1, 0.3, 0.2).normalize()],
        vec![0.6, 0.7],
        order,
        3,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let per = coeffs_per_channel(order);
    for c in scene.sh_coeffs.chunks_exact_mut(per) {
        c[0] = rng.gen_range(0.3..0.8) / splat_colorize::sh::SH_C0;
        for v in c.iter_mut().skip(1) {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    let dirs = synth::fibonacci_sphere(12);
    let views = synth::cameras_looking_at_origin(&dirs, 3.0, 35.0, 48, 48).unwrap();
    let targets = views
        .iter()
        .map(|v| splat_colorize::render(&scene, v, &RasterConfig::default()).unwrap())
        .collect();
    (scene, views, targets)
}
