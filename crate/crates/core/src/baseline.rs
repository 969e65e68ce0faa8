//! First-order optimizers over SH coefficients with frozen geometry.
//!
//! These reproduce the gradient-descent alternatives the closed-form solver
//! is compared against. Each step renders every training view, forms the
//! full-batch gradient of the mean squared image error, and applies one
//! update rule.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adjoint::gradient_frame;
use crate::error::{Error, Result};
use crate::raster::{Frame, RasterConfig};
use crate::scene::{CameraView, ChannelImage, GaussianScene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adam,
    AdamW,
    RmsProp,
    Adagrad,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Method::Adam),
            "adamw" => Ok(Method::AdamW),
            "rmsprop" => Ok(Method::RmsProp),
            "adagrad" => Ok(Method::Adagrad),
            other => Err(Error::InvalidInput(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    /// First-moment decay (Adam, AdamW).
    pub beta1: f64,
    /// Second-moment decay (Adam, AdamW) or squared-gradient smoothing
    /// (RMSprop).
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay for AdamW; L2 penalty folded into the gradient for the
    /// others.
    pub weight_decay: f64,
    pub max_steps: usize,
    /// Wall-clock limit in seconds.
    pub time_budget: Option<f64>,
    /// Held-out loss is evaluated every this many steps (and at the end).
    pub eval_interval: usize,
    pub raster: RasterConfig,
}

impl OptimizerConfig {
    /// Defaults for `method`, using the learning rates of the reference
    /// comparison: 0.0025 for Adam, AdamW and RMSprop, 0.1 for Adagrad.
    pub fn new(method: Method) -> Self {
        let base = Self {
            method,
            learning_rate: 0.0025,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_steps: 100,
            time_budget: None,
            eval_interval: 10,
            raster: RasterConfig::default(),
        };
        match method {
            Method::Adam => base,
            Method::AdamW => Self {
                weight_decay: 0.01,
                ..base
            },
            Method::RmsProp => Self { beta2: 0.99, ..base },
            Method::Adagrad => Self {
                learning_rate: 0.1,
                eps: 1e-10,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidInput("moment decays must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput("eps must be > 0 and weight decay >= 0".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::InvalidInput("eval interval must be positive".into()));
        }
        self.raster.validate()
    }
}

/// Update-rule state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u32,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, len: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        })
    }

    /// Squared-gradient state: the running average for Adam-style methods
    /// and RMSprop, the running sum for Adagrad.
    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.step += 1;
        let cfg = &self.config;
        let lr = cfg.learning_rate;
        match cfg.method {
            Method::Adam | Method::AdamW => {
                let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
                let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
                let decoupled = cfg.method == Method::AdamW;
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let g = if decoupled { *g } else { g + cfg.weight_decay * *p };
                    if decoupled {
                        *p -= lr * cfg.weight_decay * *p;
                    }
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
            Method::RmsProp => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.second) {
                    let g = g + cfg.weight_decay * *p;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    *p -= lr * g / (v.sqrt() + cfg.eps);
                }
            }
            Method::Adagrad => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.second) {
                    let g = g + cfg.weight_decay * *p;
                    *v += g * g;
                    *p -= lr * g / (v.sqrt() + cfg.eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    /// Seconds since the start of optimization, excluding held-out
    /// evaluation.
    pub seconds: f64,
    /// Mean over training views of the per-image mean squared error.
    pub train_l2: f64,
    pub test_l2: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub points: Vec<TracePoint>,
}

impl LossTrace {
    /// `step,seconds,train_L2,test_L2` rows; `test_L2` is empty when not
    /// evaluated at that step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,seconds,train_L2,test_L2\n");
        for p in &self.points {
            let test = p.test_l2.map(|t| format!("{t:e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.6},{:e},{}", p.step, p.seconds, p.train_l2, test);
        }
        out
    }

    pub fn last(&self) -> Option<&TracePoint> {
        self.points.last()
    }
}

/// Views and images held out from training and used only to report loss.
#[derive(Debug, Clone, Copy)]
pub struct HeldOut<'a> {
    pub views: &'a [CameraView],
    pub targets: &'a [ChannelImage],
}

fn mean_l2(frames: &[Frame], scene: &GaussianScene, targets: &[ChannelImage]) -> Result<f64> {
    let mut total = 0.0;
    for (f, t) in frames.iter().zip(targets) {
        let r = f.render(scene)?;
        total += r.data.iter().zip(&t.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            / t.data.len().max(1) as f64;
    }
    Ok(total / frames.len().max(1) as f64)
}

fn prepare(
    scene: &GaussianScene,
    views: &[CameraView],
    targets: &[ChannelImage],
    raster: &RasterConfig,
) -> Result<Vec<Frame>> {
    if targets.len() != views.len() {
        return Err(Error::mismatch("target image count", views.len(), targets.len()));
    }
    views
        .iter()
        .zip(targets)
        .map(|(v, t)| {
            t.check_dims(v, scene.channels, "target image")?;
            Frame::new(scene, v, raster)
        })
        .collect()
}

/// Full-batch gradient descent on the training views' mean squared error.
pub fn optimize(
    scene: &GaussianScene,
    views: &[CameraView],
    targets: &[ChannelImage],
    held_out: Option<HeldOut<'_>>,
    config: &OptimizerConfig,
) -> Result<(GaussianScene, LossTrace)> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    let mut optimizer = Optimizer::new(config.clone(), scene.sh_coeffs.len())?;
    let frames = prepare(scene, views, targets, &config.raster)?;
    let test_frames = held_out
        .map(|h| prepare(scene, h.views, h.targets, &config.raster))
        .transpose()?;
    let evaluate = |scene: &GaussianScene| -> Result<Option<f64>> {
        match (&test_frames, held_out) {
            (Some(f), Some(h)) => mean_l2(f, scene, h.targets).map(Some),
            _ => Ok(None),
        }
    };

    let mut scene = scene.clone();
    let mut trace = LossTrace::default();
    let mut elapsed = 0.0;
    let mut grad = vec![0.0; scene.sh_coeffs.len()];
    for step in 0..=config.max_steps {
        let clock = Instant::now();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut train = 0.0;
        for (frame, target) in frames.iter().zip(targets) {
            let residual = frame.render(&scene)?.sub(target);
            let n = residual.data.len().max(1) as f64;
            train += residual.data.iter().map(|r| r * r).sum::<f64>() / n;
            if step < config.max_steps {
                let g = gradient_frame(frame, &scene, &residual)?;
                let scale = 1.0 / (n * frames.len() as f64);
                for (acc, g) in grad.iter_mut().zip(&g) {
                    *acc += g * scale;
                }
            }
        }
        train /= frames.len() as f64;
        elapsed += clock.elapsed().as_secs_f64();

        let out_of_time = config.time_budget.is_some_and(|b| elapsed >= b);
        let last = step == config.max_steps || out_of_time;
        let test_l2 = if step % config.eval_interval == 0 || last {
            evaluate(&scene)?
        } else {
            None
        };
        trace.points.push(TracePoint {
            step,
            seconds: elapsed,
            train_l2: train,
            test_l2,
        });
        if last {
            break;
        }
        let clock = Instant::now();
        optimizer.apply(&mut scene.sh_coeffs, &grad);
        elapsed += clock.elapsed().as_secs_f64();
    }
    Ok((scene, trace))
}
