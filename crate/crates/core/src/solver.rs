//! Per-Gaussian weighted least squares for SH coefficients.
//!
//! With geometry frozen, each Gaussian `i` seen by views `j` gets the
//! regularized normal equation
//!
//! ```text
//! (Yᵢᵀ Vᵢ Yᵢ + wᵢ Λ) cᵢ = Yᵢᵀ Vᵢ Ĉᵢ,   wᵢ = Σ_j V_i^j
//! ```
//!
//! where row `j` of `Yᵢ` is the SH basis at the view direction, `Vᵢ` holds
//! the per-view visibilities, and `Ĉᵢ` the visibility-weighted target
//! colors. The Gram matrix depends only on geometry, so it is factored once
//! and reused for every channel and every residual refinement step.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{accumulate_frame, weighted_target_frame, ViewAccumulators, VISIBILITY_EPSILON};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::metrics::ImageMetrics;
use crate::raster::{Frame, RasterConfig};
use crate::scene::{CameraView, ChannelImage, GaussianScene};
use crate::sh::{band_of, coeffs_per_channel, MAX_SH_ORDER, SH_C0};

/// Per-band regularization weights tuned for order-3 colorization.
pub const DEFAULT_BAND_LAMBDA: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];

/// Default refinement steps for relighting.
pub const DEFAULT_REFINE_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub sh_order: usize,
    /// One weight per SH coefficient, constant within each band.
    pub lambda: Vec<f64>,
    pub n_refine: usize,
    /// Gaussians with `w_i` at or below this keep their coefficients.
    pub min_total_visibility: f64,
    pub raster: RasterConfig,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self::new(MAX_SH_ORDER)
    }
}

impl SolveConfig {
    /// Default band schedule, [`DEFAULT_REFINE_STEPS`] refinement steps.
    pub fn new(sh_order: usize) -> Self {
        Self {
            sh_order,
            lambda: expand_band_lambda(sh_order, &DEFAULT_BAND_LAMBDA[..=sh_order.min(MAX_SH_ORDER)]),
            n_refine: DEFAULT_REFINE_STEPS,
            min_total_visibility: 1e-6,
            raster: RasterConfig::default(),
        }
    }

    pub fn with_refine(mut self, n_refine: usize) -> Self {
        self.n_refine = n_refine;
        self
    }

    /// Uses `band_lambda[b]` for every coefficient of band `b`.
    pub fn with_band_lambda(mut self, band_lambda: &[f64]) -> Self {
        self.lambda = expand_band_lambda(self.sh_order, band_lambda);
        self
    }

    /// Sets all regularization weights to zero.
    pub fn unregularized(self) -> Self {
        let bands = vec![0.0; self.sh_order + 1];
        self.with_band_lambda(&bands)
    }

    pub fn coeffs_per_channel(&self) -> usize {
        coeffs_per_channel(self.sh_order)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_order > MAX_SH_ORDER {
            return Err(Error::InvalidInput(format!(
                "SH order {} exceeds {MAX_SH_ORDER}",
                self.sh_order
            )));
        }
        let per = self.coeffs_per_channel();
        if self.lambda.len() != per {
            return Err(Error::mismatch("regularization weights", per, self.lambda.len()));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput(format!("regularization weight {l} must be >= 0")));
        }
        for m in 1..per {
            let band = band_of(m);
            if self.lambda[m] != self.lambda[band * band] {
                return Err(Error::InvalidInput(format!(
                    "regularization weight {m} differs from the rest of band {}",
                    band
                )));
            }
        }
        if !(self.min_total_visibility >= 0.0) {
            return Err(Error::InvalidInput("min_total_visibility must be >= 0".into()));
        }
        self.raster.validate()
    }
}

fn expand_band_lambda(sh_order: usize, band_lambda: &[f64]) -> Vec<f64> {
    (0..coeffs_per_channel(sh_order))
        .map(|m| band_lambda.get(band_of(m)).copied().unwrap_or(f64::NAN))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemStatus {
    Ready,
    /// Total visibility at or below the configured threshold.
    Underobserved,
    NotPositiveDefinite,
}

/// Normal equation of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSystem {
    pub index: usize,
    /// `YᵀVY + wΛ`, row-major `(L+1)² × (L+1)²`.
    pub gram: Vec<f64>,
    pub factor: Option<Cholesky>,
    /// `YᵀVĈ` per channel, channel-major.
    pub rhs: Vec<f64>,
    pub total_visibility: f64,
    pub status: SystemStatus,
}

impl GaussianSystem {
    pub fn dim(&self) -> usize {
        (self.gram.len() as f64).sqrt() as usize
    }
}

/// Builds every Gaussian's regularized normal equation from per-view
/// accumulators and factors the ones with enough total visibility.
pub fn assemble(accs: &[ViewAccumulators], config: &SolveConfig) -> Result<Vec<GaussianSystem>> {
    config.validate()?;
    let first = accs.first().ok_or(Error::NoViews)?;
    let n = first.gaussian_count();
    let per = config.coeffs_per_channel();
    let k = first.channels;
    for acc in accs {
        if acc.gaussian_count() != n {
            return Err(Error::mismatch("Gaussian count across views", n, acc.gaussian_count()));
        }
        if acc.coeffs_per_channel != per {
            return Err(Error::mismatch("basis row length", per, acc.coeffs_per_channel));
        }
        if acc.channels != k {
            return Err(Error::mismatch("channel count across views", k, acc.channels));
        }
    }

    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut gram = vec![0.0; per * per];
            let mut rhs = vec![0.0; k * per];
            let mut w = 0.0;
            for acc in accs {
                let v = acc.visibility[i];
                if v <= VISIBILITY_EPSILON {
                    continue;
                }
                w += v;
                let y = acc.basis_row(i);
                for a in 0..per {
                    let vya = v * y[a];
                    for b in 0..per {
                        gram[a * per + b] += vya * y[b];
                    }
                }
                // V·Ĉ is exactly the accumulated Σ T·α·target.
                for (c, wt) in acc.weighted(i).iter().enumerate() {
                    for a in 0..per {
                        rhs[c * per + a] += wt * y[a];
                    }
                }
            }
            for a in 0..per {
                gram[a * per + a] += w * config.lambda[a];
            }
            let (factor, status) = if w > config.min_total_visibility {
                match Cholesky::factor(&gram, per) {
                    Some(f) => (Some(f), SystemStatus::Ready),
                    None => (None, SystemStatus::NotPositiveDefinite),
                }
            } else {
                (None, SystemStatus::Underobserved)
            };
            GaussianSystem {
                index: i,
                gram,
                factor,
                rhs,
                total_visibility: w,
                status,
            }
        })
        .collect())
}

/// Solves the system for all channels with its shared factorization.
/// Returns `K × (L+1)²` coefficients, channel-major.
pub fn solve(system: &GaussianSystem) -> Result<Vec<f64>> {
    let factor = match (system.status, &system.factor) {
        (SystemStatus::Ready, Some(f)) => f,
        (SystemStatus::Underobserved, _) => {
            return Err(Error::Underobserved {
                index: system.index,
                visibility: system.total_visibility,
            })
        }
        _ => return Err(Error::NotPositiveDefinite { index: system.index }),
    };
    let mut out = system.rhs.clone();
    for channel in out.chunks_exact_mut(factor.dim()) {
        factor.solve_in_place(channel);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub project_s: f64,
    pub accumulate_s: f64,
    pub assemble_s: f64,
    pub solve_s: f64,
    pub refine_s: f64,
    pub evaluate_s: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.project_s
            + self.accumulate_s
            + self.assemble_s
            + self.solve_s
            + self.refine_s
            + self.evaluate_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    /// 0 is the state right after the closed-form solve.
    pub step: usize,
    /// Per-view mean squared residual before this step's update.
    pub view_l2: Vec<f64>,
    pub mean_l2: f64,
    /// Euclidean norm of the coefficient update applied at this step.
    pub update_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub gaussians: usize,
    pub solved: usize,
    /// Gaussians left untouched because their total visibility was too low.
    pub skipped: Vec<usize>,
    /// Gaussians whose normal matrix could not be factored.
    pub failed: Vec<usize>,
    pub timings: StageTimings,
    /// Residual metrics of the final coefficients, one entry per view.
    pub views: Vec<ImageMetrics>,
    pub mean: Option<ImageMetrics>,
    pub refine_trace: Vec<RefineStep>,
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Geometry-only quantities kept between the closed-form solve and the
/// refinement steps.
#[derive(Debug, Clone)]
pub struct SolveState {
    pub frames: Vec<Frame>,
    pub accumulators: Vec<ViewAccumulators>,
    pub systems: Vec<GaussianSystem>,
}

#[derive(Debug, Clone)]
pub struct Colorization {
    pub scene: GaussianScene,
    pub state: SolveState,
    pub report: SolveReport,
}

fn check_inputs(
    scene: &GaussianScene,
    views: &[CameraView],
    targets: &[ChannelImage],
) -> Result<usize> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    if targets.len() != views.len() {
        return Err(Error::mismatch("target image count", views.len(), targets.len()));
    }
    let violations = scene.validate();
    if let Some(v) = violations.first() {
        return Err(Error::InvalidInput(format!(
            "{} scene violation(s), first: {v}",
            violations.len()
        )));
    }
    let k = targets[0].channels;
    for (view, target) in views.iter().zip(targets) {
        target.check_dims(view, k, "target image")?;
    }
    Ok(k)
}

/// Closed-form colorization: accumulates visibility, basis rows, and target
/// colors over all views, then solves every Gaussian's regularized normal
/// equation. The scene is re-laid out to `config.sh_order` and the targets'
/// channel count when they differ (new coefficients start at zero).
pub fn colorize(
    scene: &GaussianScene,
    views: &[CameraView],
    targets: &[ChannelImage],
    config: &SolveConfig,
) -> Result<Colorization> {
    config.validate()?;
    let k = check_inputs(scene, views, targets)?;
    let mut scene = if scene.sh_order != config.sh_order || scene.channels != k {
        scene.with_color_layout(config.sh_order, k)
    } else {
        scene.clone()
    };
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let frames = views
        .iter()
        .map(|v| Frame::new(&scene, v, &config.raster))
        .collect::<Result<Vec<_>>>()?;
    timings.project_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let accumulators = frames
        .iter()
        .zip(targets)
        .map(|(f, t)| accumulate_frame(f, &scene, t))
        .collect::<Result<Vec<_>>>()?;
    timings.accumulate_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let systems = assemble(&accumulators, config)?;
    timings.assemble_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let solved: Vec<Option<Vec<f64>>> = systems
        .par_iter()
        .map(|s| (s.status == SystemStatus::Ready).then(|| solve(s)).transpose())
        .collect::<Result<_>>()?;
    let mut report = SolveReport {
        gaussians: scene.len(),
        ..Default::default()
    };
    for (system, coeffs) in systems.iter().zip(solved) {
        match (system.status, coeffs) {
            (SystemStatus::Ready, Some(c)) => {
                scene.coeffs_mut(system.index).copy_from_slice(&c);
                report.solved += 1;
            }
            (SystemStatus::Underobserved, _) => report.skipped.push(system.index),
            _ => report.failed.push(system.index),
        }
    }
    timings.solve_s = clock.elapsed().as_secs_f64();
    if report.solved == 0 && !scene.is_empty() {
        return Err(Error::AllInvisible);
    }
    if !report.failed.is_empty() {
        log::warn!("{} Gaussian(s) had a singular normal matrix", report.failed.len());
    }

    let clock = Instant::now();
    report.views = evaluate(&frames, &scene, targets)?;
    report.mean = Some(ImageMetrics::mean(&report.views));
    timings.evaluate_s = clock.elapsed().as_secs_f64();
    report.timings = timings;

    Ok(Colorization {
        scene,
        state: SolveState {
            frames,
            accumulators,
            systems,
        },
        report,
    })
}

fn evaluate(frames: &[Frame], scene: &GaussianScene, targets: &[ChannelImage]) -> Result<Vec<ImageMetrics>> {
    frames
        .iter()
        .zip(targets)
        .map(|(f, t)| ImageMetrics::compare(&f.render(scene)?, t))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub steps: Vec<RefineStep>,
}

/// Residual refinement: each step renders the current coefficients, solves
/// the same normal equations against `target − render`, and applies
///
/// ```text
/// cᵢ ← cᵢ + (YᵀVY + wΛ)⁻¹ (YᵀV Ĉᵢ_resid − wᵢ Λ cᵢ)
/// ```
///
/// reusing the factorizations from [`colorize`]. The trace has
/// `n_refine + 1` entries; the last one describes the returned scene.
pub fn refine(
    scene: &GaussianScene,
    views: &[CameraView],
    targets: &[ChannelImage],
    state: &SolveState,
    config: &SolveConfig,
) -> Result<(GaussianScene, RefineTrace)> {
    config.validate()?;
    check_inputs(scene, views, targets)?;
    if state.frames.len() != views.len() {
        return Err(Error::mismatch("prepared frame count", views.len(), state.frames.len()));
    }
    if state.systems.len() != scene.len() {
        return Err(Error::mismatch("system count", scene.len(), state.systems.len()));
    }
    if let Some(s) = state
        .systems
        .iter()
        .find(|s| s.status == SystemStatus::Ready && s.factor.is_none())
    {
        return Err(Error::MissingFactorization { index: s.index });
    }
    let per = scene.coeffs_per_channel();
    let k = scene.channels;
    let mut scene = scene.clone();
    let mut trace = RefineTrace::default();

    for step in 0..=config.n_refine {
        let clock = Instant::now();
        let renders = state
            .frames
            .iter()
            .map(|f| f.render(&scene))
            .collect::<Result<Vec<_>>>()?;
        let residuals: Vec<ChannelImage> =
            targets.iter().zip(&renders).map(|(t, r)| t.sub(r)).collect();
        let view_l2: Vec<f64> = residuals
            .iter()
            .map(|r| r.data.iter().map(|v| v * v).sum::<f64>() / r.data.len().max(1) as f64)
            .collect();
        let mean_l2 = view_l2.iter().sum::<f64>() / view_l2.len() as f64;
        if step == config.n_refine {
            trace.steps.push(RefineStep {
                step,
                view_l2,
                mean_l2,
                update_norm: 0.0,
                seconds: clock.elapsed().as_secs_f64(),
            });
            break;
        }

        let weighted = state
            .frames
            .iter()
            .zip(&residuals)
            .map(|(f, r)| weighted_target_frame(f, &scene, r))
            .collect::<Result<Vec<_>>>()?;

        let updates: Vec<Option<Vec<f64>>> = state
            .systems
            .par_iter()
            .map(|system| {
                let factor = system.factor.as_ref()?;
                let i = system.index;
                let coeffs = scene.coeffs(i);
                let mut delta = vec![0.0; k * per];
                for (acc, wt) in state.accumulators.iter().zip(&weighted) {
                    if acc.visibility[i] <= VISIBILITY_EPSILON {
                        continue;
                    }
                    let y = acc.basis_row(i);
                    for c in 0..k {
                        let r = wt[i * k + c];
                        for a in 0..per {
                            delta[c * per + a] += r * y[a];
                        }
                    }
                }
                for c in 0..k {
                    let rhs = &mut delta[c * per..(c + 1) * per];
                    for a in 0..per {
                        rhs[a] -= system.total_visibility * config.lambda[a] * coeffs[c * per + a];
                    }
                    factor.solve_in_place(rhs);
                }
                Some(delta)
            })
            .collect();

        let mut norm_sq = 0.0;
        for (i, delta) in updates.into_iter().enumerate() {
            if let Some(delta) = delta {
                for (c, d) in scene.coeffs_mut(i).iter_mut().zip(&delta) {
                    *c += d;
                    norm_sq += d * d;
                }
            }
        }
        trace.steps.push(RefineStep {
            step,
            view_l2,
            mean_l2,
            update_norm: norm_sq.sqrt(),
            seconds: clock.elapsed().as_secs_f64(),
        });
    }
    Ok((scene, trace))
}

/// [`colorize`] followed by `config.n_refine` refinement steps. The report
/// carries the refinement trace and metrics of the final coefficients.
pub fn colorize_and_refine(
    scene: &GaussianScene,
    views: &[CameraView],
    targets: &[ChannelImage],
    config: &SolveConfig,
) -> Result<Colorization> {
    let mut out = colorize(scene, views, targets, config)?;
    if config.n_refine == 0 {
        return Ok(out);
    }
    let clock = Instant::now();
    let (scene, trace) = refine(&out.scene, views, targets, &out.state, config)?;
    out.report.timings.refine_s = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    out.report.views = evaluate(&out.state.frames, &scene, targets)?;
    out.report.mean = Some(ImageMetrics::mean(&out.report.views));
    out.report.timings.evaluate_s += clock.elapsed().as_secs_f64();
    out.report.refine_trace = trace.steps;
    out.scene = scene;
    Ok(out)
}

/// Result of lifting 2D masks onto the Gaussians.
#[derive(Debug, Clone)]
pub struct Segmentation {
    /// Retained Gaussians with their original geometry and coefficients.
    pub scene: GaussianScene,
    pub kept: Vec<usize>,
    /// Lifted mask value per Gaussian; `None` when too weakly observed.
    pub mask_values: Vec<Option<f64>>,
}

/// Lifts single-channel masks with an order-0, unrefined solve and keeps
/// the Gaussians whose mask value reaches `threshold`.
pub fn segment(
    scene: &GaussianScene,
    views: &[CameraView],
    masks: &[ChannelImage],
    threshold: f64,
    config: &SolveConfig,
) -> Result<Segmentation> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidInput(format!("threshold {threshold} outside [0, 1]")));
    }
    if let Some(m) = masks.iter().find(|m| m.channels != 1) {
        return Err(Error::mismatch("mask channels", 1, m.channels));
    }
    let mask_config = SolveConfig {
        sh_order: 0,
        lambda: vec![config.lambda.first().copied().unwrap_or(DEFAULT_BAND_LAMBDA[0])],
        n_refine: 0,
        ..config.clone()
    };
    let lifted = colorize(scene, views, masks, &mask_config)?;
    let mask_values: Vec<Option<f64>> = lifted
        .state
        .systems
        .iter()
        .map(|s| (s.status == SystemStatus::Ready).then(|| lifted.scene.coeffs(s.index)[0] * SH_C0))
        .collect();
    let kept: Vec<usize> = mask_values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_some_and(|v| v >= threshold))
        .map(|(i, _)| i)
        .collect();
    Ok(Segmentation {
        scene: scene.subset(&kept),
        kept,
        mask_values,
    })
}
