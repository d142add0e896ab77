//! Fitting a representation to one video.
//!
//! Each step draws `batch` distinct training frames, renders them on a fresh
//! tape, averages the per-frame MSE and applies one Adam update to every
//! parameter tensor. Held-out frames are only ever rendered after fitting,
//! for evaluation.

mod adam;
mod compare;
mod holdout;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use compare::{run_comparison, ComparisonRow, ComparisonTable};
pub use holdout::{make_holdout, HoldoutMode, HoldoutPlan};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics;
use crate::repr::{frame_time, Family, RepConfig, Representation};
use crate::rng::{SeededRng, STREAM_BATCH};
use crate::tensor::{Precision, Scalar, Tensor, PRECISION};
use crate::video::Video;
use crate::SCHEMA_VERSION;

/// Minimum training-PSNR gain (dB) that resets the early-stop counter.
pub const PLATEAU_DB: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Optimizer steps. Zero evaluates the initialization.
    pub steps: usize,
    /// Frames rendered per step.
    pub batch: usize,
    pub seed: u64,
    pub precision: Precision,
    pub adam: AdamHyper,
    /// Stop after this many steps without a training-PSNR improvement.
    pub patience: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 5000,
            batch: 4,
            seed: 0,
            precision: PRECISION,
            adam: AdamHyper::default(),
            patience: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.lr.is_finite() && a.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", a.lr)));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(a.eps.is_finite() && a.eps > 0.0) {
            return Err(Error::InvalidArgument("Adam epsilon must be positive".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        if self.precision != PRECISION {
            return Err(Error::InvalidArgument(format!(
                "fit precision {:?} does not match the build precision {:?}",
                self.precision, PRECISION
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    pub index: usize,
    pub psnr_db: f64,
    /// Absent for frames smaller than the SSIM window.
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr_db: f64,
    pub ssim: Option<f64>,
}

impl MeanMetrics {
    /// Mean over `frames`, or `None` when empty. SSIM is averaged only if
    /// every frame has one.
    pub fn of(frames: &[FrameMetric]) -> Option<Self> {
        if frames.is_empty() {
            return None;
        }
        let n = frames.len() as f64;
        let psnr_db = frames.iter().map(|f| f.psnr_db).sum::<f64>() / n;
        let ssim = frames
            .iter()
            .map(|f| f.ssim)
            .sum::<Option<f64>>()
            .map(|s| s / n);
        Some(MeanMetrics { psnr_db, ssim })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub family: Family,
    pub rep_config: RepConfig,
    pub fit_config: FitConfig,
    pub plan: HoldoutPlan,
    pub param_count: usize,
    pub steps_run: usize,
    /// Mean training-batch MSE before each update.
    pub loss_curve: Vec<f64>,
    pub train_frames: Vec<FrameMetric>,
    pub eval_frames: Vec<FrameMetric>,
    pub train_mean: MeanMetrics,
    pub eval_mean: Option<MeanMetrics>,
    /// Seconds spent fitting; omitted in deterministic mode so that reports
    /// are reproducible.
    pub wall_clock_s: Option<f64>,
}

impl FitReport {
    /// `step,loss` rows.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

/// Mean squared error between two recorded frames.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    tape.mse(pred, target)
}

fn frame_metric(index: usize, pred: &Tensor, target: &Tensor) -> Result<FrameMetric> {
    let psnr_db = metrics::psnr(pred, target)?;
    let [h, w, _] = *pred.shape() else {
        unreachable!("psnr validated the frame shape")
    };
    let ssim = if h >= metrics::SSIM_WINDOW && w >= metrics::SSIM_WINDOW {
        Some(metrics::ssim(pred, target)?)
    } else {
        None
    };
    Ok(FrameMetric { index, psnr_db, ssim })
}

/// Render every frame of `rep` and score it against `video`.
pub fn evaluate_frames(rep: &Representation, video: &Video, indices: &[usize]) -> Result<Vec<FrameMetric>> {
    let t = video.len();
    let times: Vec<Scalar> = indices.iter().map(|&k| frame_time(k, t)).collect();
    let rendered = rep.render_frames(&times)?;
    indices
        .iter()
        .zip(&rendered)
        .map(|(&k, f)| frame_metric(k, f, &video.frame(k)?))
        .collect()
}

fn check_inputs(rep: &Representation, video: &Video, plan: &HoldoutPlan, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    let g = video.geometry();
    if g != rep.config().video {
        let r = rep.config().video;
        return Err(Error::shape(
            "fit",
            &[r.frames, r.height, r.width],
            &[g.frames, g.height, g.width],
        ));
    }
    if plan.frames != g.frames || plan.train.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "holdout plan covers {} frames, the video has {}",
            plan.frames, g.frames
        )));
    }
    Ok(())
}

/// One optimizer step; returns the batch loss.
fn train_step(
    rep: &mut Representation,
    targets: &[Tensor],
    batch: &[usize],
    frames: usize,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = rep.record(&mut tape, true);
    let times: Vec<Scalar> = batch.iter().map(|&k| frame_time(k, frames)).collect();
    let rendered = rep.render_on_tape(&mut tape, &vars, &times)?;
    let mut total: Option<Var> = None;
    for (&k, &pred) in batch.iter().zip(&rendered) {
        let target = tape.constant(targets[k].clone());
        let l = mse_loss(&mut tape, pred, target)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let total = total.expect("non-empty batch");
    let loss = tape.scale(total, 1.0 / batch.len() as Scalar)?;
    let value = tape.value(loss).data()[0] as f64;
    let grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = rep
        .params()
        .iter()
        .map(|(name, t)| grads.param(name).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    adam_step(rep.params_mut(), &grads, state, hyper)?;
    Ok(value)
}

/// Fit `rep` to the training frames of `video` in place.
pub fn fit(rep: &mut Representation, video: &Video, plan: &HoldoutPlan, cfg: &FitConfig) -> Result<FitReport> {
    check_inputs(rep, video, plan, cfg)?;
    let start = Instant::now();
    let frames = video.len();
    // Only training targets are materialized for the optimizer.
    let targets: Vec<Tensor> = (0..frames)
        .map(|k| if plan.is_train(k) { video.frame(k) } else { Ok(Tensor::scalar(0.0)) })
        .collect::<Result<_>>()?;
    let mut rng = SeededRng::new(cfg.seed, STREAM_BATCH);
    let mut state = AdamState::new(rep.params());
    let batch_len = cfg.batch.min(plan.train.len());

    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let mut best_psnr = f64::NEG_INFINITY;
    let mut stale = 0usize;
    for step in 0..cfg.steps {
        let mut batch = rng.choose_distinct(&plan.train, batch_len);
        batch.sort_unstable();
        let diverged = || Error::Diverged {
            step,
            last_finite_loss: loss_curve.last().copied(),
        };
        let loss = match train_step(rep, &targets, &batch, frames, &mut state, &cfg.adam) {
            Ok(l) if l.is_finite() => l,
            Ok(_) | Err(Error::NonFinite { .. }) => return Err(diverged()),
            Err(e) => return Err(e),
        };
        loss_curve.push(loss);
        if let Some(patience) = cfg.patience {
            let p = metrics::psnr_from_mse(loss);
            if p > best_psnr + PLATEAU_DB {
                best_psnr = p;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    let steps_run = loss_curve.len();

    let train_frames = evaluate_frames(rep, video, &plan.train)?;
    let eval_frames = evaluate_frames(rep, video, &plan.eval)?;
    let wall_clock_s = (!exec::is_deterministic()).then(|| start.elapsed().as_secs_f64());
    Ok(FitReport {
        schema_version: SCHEMA_VERSION,
        family: rep.family(),
        rep_config: rep.config().clone(),
        fit_config: *cfg,
        plan: plan.clone(),
        param_count: rep.param_count(),
        steps_run,
        loss_curve,
        train_mean: MeanMetrics::of(&train_frames).expect("non-empty train set"),
        eval_mean: MeanMetrics::of(&eval_frames),
        train_frames,
        eval_frames,
        wall_clock_s,
    })
}

#[cfg(test)]
mod tests;
