//! Tile-based forward rasterizer.
//!
//! Gaussians are projected with the EWA local-affine approximation, globally
//! depth-sorted per view, and binned into screen tiles. Every pixel is then
//! composited front to back:
//!
//! ```text
//! img(x, y) = Σ_i T_i α_i C_i(d),    T_i = Π_{k<i} (1 − α_k)
//! ```
//!
//! The same traversal drives the adjoint passes in [`crate::adjoint`], so a
//! [`Frame`] (projection + tile lists) is built once per view and reused.

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{CameraView, ChannelImage, GaussianScene};
use crate::sh::{eval_channel, sh_basis_unchecked, ShBasis, MAX_SH_ORDER};

/// Screen-space low-pass filter added to every projected covariance.
pub const LOW_PASS: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterConfig {
    pub tile_size: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub transmittance_floor: f64,
    pub near_plane: f64,
    pub footprint_sigma: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_floor: 1e-4,
            near_plane: 0.01,
            footprint_sigma: 3.0,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.tile_size > 0
            && self.alpha_min > 0.0
            && self.alpha_max > 0.0
            && self.transmittance_floor > 0.0
            && self.near_plane > 0.0
            && self.footprint_sigma > 0.0;
        if !positive {
            return Err(Error::InvalidInput("raster thresholds must be positive".into()));
        }
        if !(self.alpha_min < self.alpha_max && self.alpha_max <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "need alpha_min < alpha_max <= 1, got {} and {}",
                self.alpha_min, self.alpha_max
            )));
        }
        Ok(())
    }
}

/// A Gaussian as seen from one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSplat {
    pub gaussian_index: usize,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub view_dir: Vector3<f64>,
    pub basis: ShBasis,
    /// Inclusive pixel bounds `[x0, x1] × [y0, y1]` of the footprint,
    /// clipped to the image.
    pub bounds: [usize; 4],
}

impl ProjectedSplat {
    /// Blend weight `α` at pixel center `(px, py)`, or `None` when the pixel
    /// is outside the footprint or below `alpha_min`.
    #[inline]
    pub fn alpha_at(&self, px: f64, py: f64, config: &RasterConfig) -> Option<f64> {
        let dx = px - self.mean2d.x;
        let dy = py - self.mean2d.y;
        let q = self.conic[(0, 0)] * dx * dx
            + 2.0 * self.conic[(0, 1)] * dx * dy
            + self.conic[(1, 1)] * dy * dy;
        if q > config.footprint_sigma * config.footprint_sigma {
            return None;
        }
        let alpha = (self.opacity * (-0.5 * q).exp()).min(config.alpha_max);
        (alpha >= config.alpha_min).then_some(alpha)
    }
}

/// Projects every Gaussian in front of the near plane whose footprint
/// touches the image. The result is sorted by ascending depth, ties broken
/// by Gaussian index.
pub fn project(
    scene: &GaussianScene,
    view: &CameraView,
    config: &RasterConfig,
) -> Result<Vec<ProjectedSplat>> {
    if scene.sh_order > MAX_SH_ORDER {
        return Err(Error::InvalidInput(format!(
            "SH order {} exceeds {MAX_SH_ORDER}",
            scene.sh_order
        )));
    }
    let rot = view.rotation();
    let cam_pos = view.position();
    let mut splats: Vec<ProjectedSplat> = (0..scene.len())
        .into_par_iter()
        .map(|i| -> Result<Option<ProjectedSplat>> {
            let p = view.to_camera(&scene.means[i]);
            if p.z <= config.near_plane {
                return Ok(None);
            }
            let cov3 = scene.covariance(i)?;
            let (z, z2) = (p.z, p.z * p.z);
            let jac = nalgebra::Matrix2x3::new(
                view.fx / z,
                0.0,
                -view.fx * p.x / z2,
                0.0,
                view.fy / z,
                -view.fy * p.y / z2,
            );
            let t = jac * rot;
            let mut cov2d = t * cov3 * t.transpose();
            cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
            cov2d[(1, 0)] = cov2d[(0, 1)];
            cov2d[(0, 0)] += LOW_PASS;
            cov2d[(1, 1)] += LOW_PASS;
            let det = cov2d.determinant();
            if !(det > 0.0) {
                return Ok(None);
            }
            let conic = Matrix2::new(
                cov2d[(1, 1)] / det,
                -cov2d[(0, 1)] / det,
                -cov2d[(1, 0)] / det,
                cov2d[(0, 0)] / det,
            );
            let mean2d = Vector2::new(view.fx * p.x / z + view.cx, view.fy * p.y / z + view.cy);
            let hx = config.footprint_sigma * cov2d[(0, 0)].sqrt();
            let hy = config.footprint_sigma * cov2d[(1, 1)].sqrt();
            let Some(bounds) = clip_bounds(mean2d, hx, hy, view.width, view.height) else {
                return Ok(None);
            };
            let view_dir = (scene.means[i] - cam_pos).normalize();
            Ok(Some(ProjectedSplat {
                gaussian_index: i,
                mean2d,
                cov2d,
                conic,
                depth: z,
                opacity: scene.opacities[i],
                view_dir,
                basis: sh_basis_unchecked(scene.sh_order, &view_dir),
                bounds,
            }))
        })
        .filter_map(|r| r.transpose())
        .collect::<Result<_>>()?;
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
    Ok(splats)
}

fn clip_bounds(
    center: Vector2<f64>,
    half_x: f64,
    half_y: f64,
    width: usize,
    height: usize,
) -> Option<[usize; 4]> {
    let x0 = (center.x - half_x).ceil().max(0.0);
    let x1 = (center.x + half_x).floor().min(width as f64 - 1.0);
    let y0 = (center.y - half_y).ceil().max(0.0);
    let y1 = (center.y + half_y).floor().min(height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
}

/// Projection and tile binning of one view, reusable across passes while
/// the geometry stays fixed.
#[derive(Debug, Clone)]
pub struct Frame {
    pub splats: Vec<ProjectedSplat>,
    pub width: usize,
    pub height: usize,
    pub config: RasterConfig,
    tiles_x: usize,
    /// Per tile, indices into `splats` in depth order.
    tiles: Vec<Vec<u32>>,
    gaussian_count: usize,
}

impl Frame {
    pub fn new(scene: &GaussianScene, view: &CameraView, config: &RasterConfig) -> Result<Self> {
        config.validate()?;
        view.validate()?;
        let splats = project(scene, view, config)?;
        let ts = config.tile_size;
        let tiles_x = view.width.div_ceil(ts);
        let tiles_y = view.height.div_ceil(ts);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (s, splat) in splats.iter().enumerate() {
            let [x0, x1, y0, y1] = splat.bounds;
            for ty in y0 / ts..=y1 / ts {
                for tx in x0 / ts..=x1 / ts {
                    tiles[ty * tiles_x + tx].push(s as u32);
                }
            }
        }
        Ok(Self {
            splats,
            width: view.width,
            height: view.height,
            config: *config,
            tiles_x,
            tiles,
            gaussian_count: scene.len(),
        })
    }

    pub fn gaussian_count(&self) -> usize {
        self.gaussian_count
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    /// Pixel rectangle `[x0, x1) × [y0, y1)` of tile `t`.
    fn tile_rect(&self, t: usize) -> [usize; 4] {
        let ts = self.config.tile_size;
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        [
            tx * ts,
            ((tx + 1) * ts).min(self.width),
            ty * ts,
            ((ty + 1) * ts).min(self.height),
        ]
    }

    /// Walks the depth-ordered splats covering pixel `(x, y)` of tile `t`,
    /// calling `visit(local, T·α)` where `local` indexes the tile's list.
    #[inline]
    fn blend_pixel(&self, t: usize, x: usize, y: usize, mut visit: impl FnMut(usize, f64)) {
        let (px, py) = (x as f64, y as f64);
        let mut transmittance = 1.0;
        for (local, &s) in self.tiles[t].iter().enumerate() {
            let splat = &self.splats[s as usize];
            let Some(alpha) = splat.alpha_at(px, py, &self.config) else {
                continue;
            };
            visit(local, transmittance * alpha);
            transmittance *= 1.0 - alpha;
            if transmittance < self.config.transmittance_floor {
                break;
            }
        }
    }

    /// Renders the scene's current coefficients.
    pub fn render(&self, scene: &GaussianScene) -> Result<ChannelImage> {
        self.check_scene(scene)?;
        let k = scene.channels;
        let per = scene.coeffs_per_channel();
        let colors: Vec<f64> = self
            .splats
            .iter()
            .flat_map(|s| {
                scene
                    .coeffs(s.gaussian_index)
                    .chunks_exact(per)
                    .map(|c| eval_channel(c, &s.basis))
                    .collect::<Vec<_>>()
            })
            .collect();

        let blocks: Vec<Vec<f64>> = (0..self.tile_count())
            .into_par_iter()
            .map(|t| {
                let [x0, x1, y0, y1] = self.tile_rect(t);
                let list = &self.tiles[t];
                let mut block = vec![0.0; (x1 - x0) * (y1 - y0) * k];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let at = ((y - y0) * (x1 - x0) + (x - x0)) * k;
                        let px = &mut block[at..at + k];
                        self.blend_pixel(t, x, y, |local, weight| {
                            let c = &colors[list[local] as usize * k..][..k];
                            for (p, c) in px.iter_mut().zip(c) {
                                *p += weight * c;
                            }
                        });
                    }
                }
                block
            })
            .collect();

        let mut image = ChannelImage::zeros(self.width, self.height, k);
        for (t, block) in blocks.iter().enumerate() {
            let [x0, x1, y0, y1] = self.tile_rect(t);
            let row = (x1 - x0) * k;
            for y in y0..y1 {
                let dst = (y * self.width + x0) * k;
                image.data[dst..dst + row].copy_from_slice(&block[(y - y0) * row..][..row]);
            }
        }
        Ok(image)
    }

    /// Per-Gaussian sums of `T·α` and of `T·α·weights(x, y, k)` over all
    /// pixels. Returns `(Σ T·α, Σ T·α·w)` with the second laid out
    /// `N_g × K`. When `weights` is `None` only the first is filled.
    pub(crate) fn blend_sums(&self, weights: Option<&ChannelImage>) -> (Vec<f64>, Vec<f64>) {
        let k = weights.map_or(0, |w| w.channels);
        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..self.tile_count())
            .into_par_iter()
            .map(|t| {
                let [x0, x1, y0, y1] = self.tile_rect(t);
                let n = self.tiles[t].len();
                let mut vis = vec![0.0; n];
                let mut weighted = vec![0.0; n * k];
                if n == 0 {
                    return (vis, weighted);
                }
                for y in y0..y1 {
                    for x in x0..x1 {
                        let w = weights.map(|w| w.pixel(x, y));
                        self.blend_pixel(t, x, y, |local, tw| {
                            vis[local] += tw;
                            if let Some(w) = w {
                                for (acc, w) in weighted[local * k..][..k].iter_mut().zip(w) {
                                    *acc += tw * w;
                                }
                            }
                        });
                    }
                }
                (vis, weighted)
            })
            .collect();

        let mut visibility = vec![0.0; self.gaussian_count];
        let mut weighted = vec![0.0; self.gaussian_count * k];
        for (t, (vis, wt)) in partials.iter().enumerate() {
            for (local, &s) in self.tiles[t].iter().enumerate() {
                let g = self.splats[s as usize].gaussian_index;
                visibility[g] += vis[local];
                for c in 0..k {
                    weighted[g * k + c] += wt[local * k + c];
                }
            }
        }
        (visibility, weighted)
    }

    fn check_scene(&self, scene: &GaussianScene) -> Result<()> {
        if scene.len() != self.gaussian_count {
            return Err(Error::mismatch(
                "scene size for prepared frame",
                self.gaussian_count,
                scene.len(),
            ));
        }
        if let Some(s) = self.splats.first() {
            if s.basis.len() != scene.coeffs_per_channel() {
                return Err(Error::mismatch(
                    "SH order for prepared frame",
                    s.basis.len(),
                    scene.coeffs_per_channel(),
                ));
            }
        }
        Ok(())
    }
}

/// Renders `scene` from `view`.
pub fn render(
    scene: &GaussianScene,
    view: &CameraView,
    config: &RasterConfig,
) -> Result<ChannelImage> {
    Frame::new(scene, view, config)?.render(scene)
}

/// `Σ_{x,y} weights(x, y, k) · img(x, y, k)` for each channel `k`.
pub fn render_sum_weighted(
    scene: &GaussianScene,
    view: &CameraView,
    config: &RasterConfig,
    weights: &ChannelImage,
) -> Result<Vec<f64>> {
    weights.check_dims(view, scene.channels, "weight image")?;
    let image = render(scene, view, config)?;
    let k = scene.channels;
    let mut sums = vec![0.0; k];
    for (px, w) in image.data.chunks_exact(k).zip(weights.data.chunks_exact(k)) {
        for c in 0..k {
            sums[c] += px[c] * w[c];
        }
    }
    Ok(sums)
}
