//! Video representation families behind one rendering contract.
//!
//! Every family maps a normalized time `t ∈ [0, 1]` to an `H × W × 3` frame
//! with values in `(0, 1)`. Frame `k` of a `T`-frame video sits at
//! `t = k / (T - 1)`. All trainable tensors live in a [`ParamStore`]; the
//! family-specific code only decides how they are wired on a [`Tape`].

mod budget;
mod config;
pub mod decoder;
pub mod posenc;
mod store;
pub mod triplane;
pub mod voxel;

pub use budget::{match_param_budget, param_count, BudgetMatch, BUDGET_TOLERANCE};
pub use config::{
    FLOW_OUTPUTS,
    Combine, DecoderConfig, Family, FlowConfig, PosEncConfig, RepConfig, TriPlaneConfig,
    VideoGeometry, VoxelConfig,
};
pub use store::{ParamStore, ParamVars};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::motion;
use crate::rng::{SeededRng, STREAM_INIT};
use crate::tensor::{Scalar, Tensor, PRECISION};

/// Standard deviation of plane and volume feature initialization.
pub const FEATURE_INIT_STD: f64 = 0.1;

/// A representation of one video: its configuration plus trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    config: RepConfig,
    params: ParamStore,
}

impl Representation {
    /// Build and initialize from `config.seed`.
    pub fn new(config: RepConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed, STREAM_INIT);
        let mut params = ParamStore::default();
        match config.family {
            Family::TriPlane => triplane::init(&config, &mut params, &mut rng),
            Family::Voxel => voxel::init(&config, &mut params, &mut rng),
            Family::PosEnc => posenc::init(&config, &mut params, &mut rng),
            Family::TriPlaneFlow => motion::init(&config, &mut params, &mut rng),
        }
        Ok(Representation { config, params })
    }

    /// Rebuild from stored tensors, checking names and shapes against a
    /// freshly initialized layout.
    pub fn from_parts(config: RepConfig, params: ParamStore) -> Result<Self> {
        let layout = Self::new(config.clone())?;
        if layout.params.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                layout.params.len(),
                params.len()
            )));
        }
        for ((name, want), (got_name, got)) in layout.params.iter().zip(params.iter()) {
            if name != got_name || want.shape() != got.shape() {
                return Err(Error::Format(format!(
                    "tensor `{got_name}` {:?} does not match expected `{name}` {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Representation { config, params })
    }

    pub fn config(&self) -> &RepConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }

    /// Put every parameter on `tape`, trainable or as constants.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        self.params.record(tape, trainable)
    }

    /// Record the frames at `times` on `tape`; returns one `[H, W, 3]` var
    /// per time.
    pub fn render_on_tape(&self, tape: &mut Tape, vars: &ParamVars, times: &[Scalar]) -> Result<Vec<Var>> {
        for &t in times {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
            }
        }
        let cfg = &self.config;
        match cfg.family {
            Family::TriPlane => times
                .iter()
                .map(|&t| {
                    let f = triplane::feature_frame(tape, vars, cfg, t, cfg.video.height, cfg.video.width)?;
                    decoder::FrameDecoder::from_vars(vars)?.decode(tape, f)
                })
                .collect(),
            Family::Voxel => times
                .iter()
                .map(|&t| {
                    let f = voxel::feature_frame(tape, vars, cfg, t, cfg.video.height, cfg.video.width)?;
                    decoder::FrameDecoder::from_vars(vars)?.decode(tape, f)
                })
                .collect(),
            Family::PosEnc => times.iter().map(|&t| posenc::render(tape, vars, cfg, t)).collect(),
            Family::TriPlaneFlow => motion::render_frames(tape, vars, cfg, times),
        }
    }

    /// Render one frame without recording gradients.
    pub fn render_frame(&self, t: Scalar) -> Result<Tensor> {
        Ok(self.render_frames(&[t])?.remove(0))
    }

    pub fn render_frames(&self, times: &[Scalar]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let frames = self.render_on_tape(&mut tape, &vars, times)?;
        Ok(frames.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Render every frame of the configured video.
    pub fn render_video(&self) -> Result<Vec<Tensor>> {
        let times: Vec<Scalar> = (0..self.config.video.frames)
            .map(|k| frame_time(k, self.config.video.frames))
            .collect();
        self.render_frames(&times)
    }
}

/// Normalized time of frame `k` in a `frames`-long video.
pub fn frame_time(k: usize, frames: usize) -> Scalar {
    if frames <= 1 {
        0.0
    } else {
        k as Scalar / (frames - 1) as Scalar
    }
}

/// Grid coordinates `(u * (cols - 1), v * (rows - 1))` for every pixel centre
/// `u = j / (width - 1)`, `v = i / (height - 1)` of an `height × width` frame.
pub(crate) fn pixel_grid(height: usize, width: usize, cols: usize, rows: usize) -> Tensor {
    let mut data = Vec::with_capacity(height * width * 2);
    for i in 0..height {
        let v = frame_time(i, height);
        for j in 0..width {
            let u = frame_time(j, width);
            data.push(u * (cols - 1) as Scalar);
            data.push(v * (rows - 1) as Scalar);
        }
    }
    Tensor::new(&[height, width, 2], data).expect("grid shape")
}

/// He-normal initialized tensor.
pub(crate) fn he_normal(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal(std)).collect()).expect("init shape")
}

pub(crate) fn feature_normal(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal(FEATURE_INIT_STD)).collect()).expect("init shape")
}

pub(crate) fn check_precision(cfg: &RepConfig) -> Result<()> {
    if cfg.precision != PRECISION {
        return Err(Error::InvalidArgument(format!(
            "config asks for {:?} but this build computes in {:?}",
            cfg.precision, PRECISION
        )));
    }
    Ok(())
}
