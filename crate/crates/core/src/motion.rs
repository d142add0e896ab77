//! Explicit motion model of the tri-plane + flow family.
//!
//! A static global feature plane `F_G` is animated by flows decoded from
//! three motion planes. For every feature-time step `s` a two-layer MLP maps
//! the concatenated motion-plane samples at each global-grid cell to a local
//! flow, a global flow and a mask logit. The appearance volume follows
//!
//! ```text
//! F(0) = F_G
//! F(s) = m_s ⊙ warp(F_G, g_s) + (1 - m_s) ⊙ warp(F(s-1), l_s)
//! ```
//!
//! and frames are decoded from slices interpolated linearly in time.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::repr::{
    decoder::{self, FrameDecoder, LEAKY_SLOPE},
    feature_normal, he_normal, pixel_grid, Family, ParamStore, ParamVars, RepConfig,
    Representation, FLOW_OUTPUTS,
};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

pub const GLOBAL_PLANE: &str = "global_plane";
pub const MOTION_XY: &str = "motion_xy";
pub const MOTION_XT: &str = "motion_xt";
pub const MOTION_YT: &str = "motion_yt";
pub const FLOW_W0: &str = "flow_mlp.0.weight";
pub const FLOW_B0: &str = "flow_mlp.0.bias";
pub const FLOW_W1: &str = "flow_mlp.1.weight";
pub const FLOW_B1: &str = "flow_mlp.1.bias";

/// Time coordinates closer than this to a slice index snap onto it.
const SLICE_SNAP: Scalar = 1e-9;

pub(crate) fn init(cfg: &RepConfig, params: &mut ParamStore, rng: &mut SeededRng) {
    let f = &cfg.flow;
    let (n, nm) = (f.global_resolution, f.motion_resolution);
    params.insert(GLOBAL_PLANE, feature_normal(&[n, n, f.global_channels], rng));
    for name in [MOTION_XY, MOTION_XT, MOTION_YT] {
        params.insert(name, feature_normal(&[nm, nm, f.motion_channels], rng));
    }
    let input = 3 * f.motion_channels;
    params.insert(FLOW_W0, he_normal(&[input, f.hidden_width], input, rng));
    params.insert(FLOW_B0, Tensor::zeros(&[f.hidden_width]));
    params.insert(FLOW_W1, he_normal(&[f.hidden_width, FLOW_OUTPUTS], f.hidden_width, rng));
    params.insert(FLOW_B1, Tensor::zeros(&[FLOW_OUTPUTS]));
    decoder::init(params, f.global_channels, cfg.decoder.hidden_channels, rng);
}

/// Flow decoder outputs for one feature-time step, as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct FlowVars {
    /// `[N, N, 2]` displacement applied to the previous appearance slice.
    pub local: Var,
    /// `[N, N, 2]` displacement applied to the global plane.
    pub global: Var,
    /// `[N, N, 1]` blend weight of the global path, in (0, 1).
    pub mask: Var,
}

/// Materialized [`FlowVars`]. Flows are `(dx, dy)` in global-grid cells per
/// feature-time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub local: Tensor,
    pub global: Tensor,
    pub mask: Tensor,
}

/// Appearance-volume slices `F(0) ..= F(T_f - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceVolume {
    pub slices: Vec<Tensor>,
}

fn require_flow(cfg: &RepConfig) -> Result<()> {
    if cfg.family != Family::TriPlaneFlow {
        return Err(Error::InvalidArgument(format!(
            "motion model needs a triplane_flow representation, got {}",
            cfg.family
        )));
    }
    Ok(())
}

/// Record the flow decoder at feature-time step `s`.
pub fn decode_flow_on_tape(tape: &mut Tape, vars: &ParamVars, cfg: &RepConfig, s: usize) -> Result<FlowVars> {
    let f = &cfg.flow;
    let slices = cfg.time_slices();
    if s >= slices {
        return Err(Error::InvalidArgument(format!(
            "feature-time step {s} outside 0..{slices}"
        )));
    }
    let (n, nm) = (f.global_resolution, f.motion_resolution);
    let ts = s as Scalar / (slices - 1) as Scalar * (nm - 1) as Scalar;
    let xy = pixel_grid(n, n, nm, nm);
    let mut xt = xy.clone();
    let mut yt = xy.clone();
    for ((a, b), src) in xt
        .data_mut()
        .chunks_exact_mut(2)
        .zip(yt.data_mut().chunks_exact_mut(2))
        .zip(xy.data().chunks_exact(2))
    {
        a[0] = src[0];
        a[1] = ts;
        b[0] = src[1];
        b[1] = ts;
    }
    let planes = [vars.get(MOTION_XY)?, vars.get(MOTION_XT)?, vars.get(MOTION_YT)?];
    let feats = crate::repr::triplane::sample_planes(tape, planes, [xy, xt, yt], crate::repr::Combine::Concat)?;
    let x = tape.reshape(feats, &[n * n, 3 * f.motion_channels])?;
    let h = tape.matmul(x, vars.get(FLOW_W0)?)?;
    let h = tape.add_bias(h, vars.get(FLOW_B0)?)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let o = tape.matmul(h, vars.get(FLOW_W1)?)?;
    let o = tape.add_bias(o, vars.get(FLOW_B1)?)?;
    let o = tape.reshape(o, &[n, n, FLOW_OUTPUTS])?;
    let local = tape.narrow(o, 0, 2)?;
    let global = tape.narrow(o, 2, 2)?;
    let logit = tape.narrow(o, 4, 1)?;
    let mask = tape.sigmoid(logit)?;
    Ok(FlowVars { local, global, mask })
}

/// Flow field of `rep` at feature-time step `s`.
pub fn decode_flow(rep: &Representation, s: usize) -> Result<FlowField> {
    require_flow(rep.config())?;
    let mut tape = Tape::new();
    let vars = rep.record(&mut tape, false);
    let fv = decode_flow_on_tape(&mut tape, &vars, rep.config(), s)?;
    Ok(FlowField {
        local: tape.value(fv.local).clone(),
        global: tape.value(fv.global).clone(),
        mask: tape.value(fv.mask).clone(),
    })
}

/// Record appearance slices `0..=last`, sequentially in feature time.
pub fn recurrence_on_tape(tape: &mut Tape, vars: &ParamVars, cfg: &RepConfig, last: usize) -> Result<Vec<Var>> {
    let global = vars.get(GLOBAL_PLANE)?;
    let mut slices = Vec::with_capacity(last + 1);
    slices.push(global);
    for s in 1..=last {
        let fv = decode_flow_on_tape(tape, vars, cfg, s)?;
        let from_global = tape.forward_warp(global, fv.global)?;
        let from_previous = tape.forward_warp(slices[s - 1], fv.local)?;
        slices.push(tape.mask_blend(fv.mask, from_global, from_previous)?);
    }
    Ok(slices)
}

/// Full appearance volume of `rep`.
pub fn appearance_recurrence(rep: &Representation) -> Result<AppearanceVolume> {
    require_flow(rep.config())?;
    let mut tape = Tape::new();
    let vars = rep.record(&mut tape, false);
    let last = rep.config().time_slices() - 1;
    let slices = recurrence_on_tape(&mut tape, &vars, rep.config(), last)?;
    Ok(AppearanceVolume {
        slices: slices.into_iter().map(|v| tape.value(v).clone()).collect(),
    })
}

/// Fractional slice position of normalized time `t`.
fn slice_position(t: Scalar, slices: usize) -> Scalar {
    let s = t.clamp(0.0, 1.0) * (slices - 1) as Scalar;
    let r = s.round();
    if (s - r).abs() < SLICE_SNAP {
        r
    } else {
        s
    }
}

/// Record the `[N, N, C_G]` feature frame at `t` from recorded slices.
pub fn interpolate_slices(tape: &mut Tape, slices: &[Var], t: Scalar, total: usize) -> Result<Var> {
    let s = slice_position(t, total);
    let lo = s.floor() as usize;
    let w = s - lo as Scalar;
    if w == 0.0 {
        return Ok(slices[lo]);
    }
    let a = tape.scale(slices[lo], 1.0 - w)?;
    let b = tape.scale(slices[lo + 1], w)?;
    tape.add(a, b)
}

pub(crate) fn render_frames(tape: &mut Tape, vars: &ParamVars, cfg: &RepConfig, times: &[Scalar]) -> Result<Vec<Var>> {
    let total = cfg.time_slices();
    let last = times
        .iter()
        .map(|&t| slice_position(t, total).ceil() as usize)
        .max()
        .unwrap_or(0);
    let slices = recurrence_on_tape(tape, vars, cfg, last)?;
    let n = cfg.flow.global_resolution;
    let (h, w) = (cfg.video.height, cfg.video.width);
    let dec = FrameDecoder::from_vars(vars)?;
    times
        .iter()
        .map(|&t| {
            let mut f = interpolate_slices(tape, &slices, t, total)?;
            if (h, w) != (n, n) {
                let grid = tape.constant(pixel_grid(h, w, n, n));
                f = tape.sample2d(f, grid)?;
            }
            dec.decode(tape, f)
        })
        .collect()
}
