//! Randomized trial generators for each checked operation.

use super::{CaseFn, Scope, Trial, INTEGER_MARGIN};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::motion;
use crate::repr::{Family, ParamVars, RepConfig, Representation, VideoGeometry};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

pub(super) fn cases(scope: Scope) -> &'static [(&'static str, CaseFn)] {
    match scope {
        Scope::Primitives => &[
            ("add", add),
            ("sub", sub),
            ("mul", mul),
            ("div", div),
            ("leaky_relu", leaky_relu),
            ("sigmoid", sigmoid),
            ("tanh", tanh),
            ("square", square),
            ("matmul", matmul),
            ("add_bias", add_bias),
            ("conv2d", conv2d),
            ("bilinear_sample2d", sample2d),
            ("trilinear_sample3d", sample3d),
            ("concat", concat),
            ("narrow", narrow),
            ("reshape", reshape),
            ("mask_blend", mask_blend),
            ("sum", sum),
            ("mse", mse),
        ],
        Scope::Warp => &[
            ("forward_warp", forward_warp),
            ("flow_decoder", flow_decoder),
            ("appearance_recurrence", recurrence),
        ],
        Scope::End2end => &[
            ("render_posenc", |r| render(r, Family::PosEnc)),
            ("render_voxel", |r| render(r, Family::Voxel)),
            ("render_triplane", |r| render(r, Family::TriPlane)),
            ("render_triplane_flow", |r| render(r, Family::TriPlaneFlow)),
        ],
    }
}

fn dim(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn uniform(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(lo, hi) as Scalar).collect();
    Tensor::new(shape, data).expect("non-empty shape")
}

/// Values with `min <= |v| <= max` and random sign.
fn away_from_zero(rng: &mut SeededRng, shape: &[usize], min: f64, max: f64) -> Tensor {
    let mut t = uniform(rng, shape, min, max);
    for v in t.data_mut() {
        if rng.uniform() < 0.5 {
            *v = -*v;
        }
    }
    t
}

/// A coordinate in `[0, n - 1]` at least `INTEGER_MARGIN` from any integer.
fn grid_coord(rng: &mut SeededRng, n: usize) -> Scalar {
    let cell = rng.below(n - 1) as f64;
    (cell + rng.uniform_range(INTEGER_MARGIN, 1.0 - INTEGER_MARGIN)) as Scalar
}

/// A displacement in `[-2, 2]` at least `INTEGER_MARGIN` from any integer.
fn offset(rng: &mut SeededRng) -> Scalar {
    (rng.below(4) as f64 - 2.0 + rng.uniform_range(INTEGER_MARGIN, 1.0 - INTEGER_MARGIN)) as Scalar
}

/// `sum(w * v)` with fixed random weights `w`, so that every output entry
/// contributes with a distinct coefficient.
fn weighted(tape: &mut Tape, v: Var, w: &Tensor) -> Result<Var> {
    let w = tape.constant(w.clone());
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn trial(params: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Result<Trial> {
    Ok(Trial {
        params,
        f: Box::new(f),
    })
}

fn matrix_shape(rng: &mut SeededRng) -> [usize; 2] {
    [dim(rng, 1, 4), dim(rng, 1, 4)]
}

fn binary_case(
    rng: &mut SeededRng,
    b_min_abs: f64,
    op: fn(&mut Tape, Var, Var) -> Result<Var>,
    scalar_op: fn(&mut Tape, Var, Scalar) -> Result<Var>,
) -> Result<Trial> {
    let s = matrix_shape(rng);
    let a = uniform(rng, &s, -1.5, 1.5);
    let b = away_from_zero(rng, &s, b_min_abs, 1.5);
    let c = away_from_zero(rng, &[1], 0.5, 1.5).data()[0];
    let w = uniform(rng, &s, -1.0, 1.0);
    trial(vec![a, b], move |t, v| {
        let r = op(t, v[0], v[1])?;
        let r = scalar_op(t, r, c)?;
        weighted(t, r, &w)
    })
}

fn add(rng: &mut SeededRng) -> Result<Trial> {
    binary_case(rng, 0.0, Tape::add, |t, a, s| {
        t.with_scalar(crate::autodiff::BinaryOp::Add, a, s)
    })
}

fn sub(rng: &mut SeededRng) -> Result<Trial> {
    binary_case(rng, 0.0, Tape::sub, |t, a, s| {
        t.with_scalar(crate::autodiff::BinaryOp::Sub, a, s)
    })
}

fn mul(rng: &mut SeededRng) -> Result<Trial> {
    binary_case(rng, 0.0, Tape::mul, Tape::scale)
}

fn div(rng: &mut SeededRng) -> Result<Trial> {
    binary_case(rng, 0.5, Tape::div, |t, a, s| {
        t.with_scalar(crate::autodiff::BinaryOp::Div, a, s)
    })
}

fn unary_case(rng: &mut SeededRng, x: Tensor, op: impl Fn(&mut Tape, Var) -> Result<Var> + 'static) -> Result<Trial> {
    let w = uniform(rng, x.shape(), -1.0, 1.0);
    trial(vec![x], move |t, v| {
        let r = op(t, v[0])?;
        weighted(t, r, &w)
    })
}

fn leaky_relu(rng: &mut SeededRng) -> Result<Trial> {
    let s = matrix_shape(rng);
    let x = away_from_zero(rng, &s, INTEGER_MARGIN, 2.0);
    let slope = rng.uniform_range(0.01, 0.5) as Scalar;
    unary_case(rng, x, move |t, a| t.leaky_relu(a, slope))
}

fn sigmoid(rng: &mut SeededRng) -> Result<Trial> {
    let s = matrix_shape(rng);
    let x = uniform(rng, &s, -4.0, 4.0);
    unary_case(rng, x, Tape::sigmoid)
}

fn tanh(rng: &mut SeededRng) -> Result<Trial> {
    let s = matrix_shape(rng);
    let x = uniform(rng, &s, -3.0, 3.0);
    unary_case(rng, x, Tape::tanh)
}

fn square(rng: &mut SeededRng) -> Result<Trial> {
    let s = matrix_shape(rng);
    let x = uniform(rng, &s, -2.0, 2.0);
    unary_case(rng, x, Tape::square)
}

fn matmul(rng: &mut SeededRng) -> Result<Trial> {
    let (m, k, n) = (dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 5));
    let a = uniform(rng, &[m, k], -1.0, 1.0);
    let b = uniform(rng, &[k, n], -1.0, 1.0);
    let w = uniform(rng, &[m, n], -1.0, 1.0);
    trial(vec![a, b], move |t, v| {
        let r = t.matmul(v[0], v[1])?;
        weighted(t, r, &w)
    })
}

fn add_bias(rng: &mut SeededRng) -> Result<Trial> {
    let shape = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4)];
    let a = uniform(rng, &shape, -1.0, 1.0);
    let b = uniform(rng, &shape[2..], -1.0, 1.0);
    let w = uniform(rng, &shape, -1.0, 1.0);
    trial(vec![a, b], move |t, v| {
        let r = t.add_bias(v[0], v[1])?;
        weighted(t, r, &w)
    })
}

fn conv2d(rng: &mut SeededRng) -> Result<Trial> {
    let (h, w, cin, cout) = (dim(rng, 2, 5), dim(rng, 2, 5), dim(rng, 1, 3), dim(rng, 1, 3));
    let k = if rng.uniform() < 0.75 { 3 } else { 1 };
    let x = uniform(rng, &[h, w, cin], -1.0, 1.0);
    let kernel = uniform(rng, &[k, k, cin, cout], -1.0, 1.0);
    let bias = uniform(rng, &[cout], -1.0, 1.0);
    let wt = uniform(rng, &[h, w, cout], -1.0, 1.0);
    trial(vec![x, kernel, bias], move |t, v| {
        let r = t.conv2d(v[0], v[1], v[2])?;
        weighted(t, r, &wt)
    })
}

fn sample2d(rng: &mut SeededRng) -> Result<Trial> {
    let (rows, cols, ch, points) = (dim(rng, 2, 5), dim(rng, 2, 5), dim(rng, 1, 3), dim(rng, 1, 6));
    let plane = uniform(rng, &[rows, cols, ch], -1.0, 1.0);
    let coords: Vec<Scalar> = (0..points)
        .flat_map(|_| [grid_coord(rng, cols), grid_coord(rng, rows)])
        .collect();
    let coords = Tensor::new(&[points, 2], coords)?;
    let w = uniform(rng, &[points, ch], -1.0, 1.0);
    trial(vec![plane, coords], move |t, v| {
        let r = t.sample2d(v[0], v[1])?;
        weighted(t, r, &w)
    })
}

fn sample3d(rng: &mut SeededRng) -> Result<Trial> {
    let (depth, rows, cols) = (dim(rng, 2, 4), dim(rng, 2, 4), dim(rng, 2, 4));
    let (ch, points) = (dim(rng, 1, 3), dim(rng, 1, 6));
    let volume = uniform(rng, &[depth, rows, cols, ch], -1.0, 1.0);
    let coords: Vec<Scalar> = (0..points)
        .flat_map(|_| [grid_coord(rng, cols), grid_coord(rng, rows), grid_coord(rng, depth)])
        .collect();
    let coords = Tensor::new(&[points, 3], coords)?;
    let w = uniform(rng, &[points, ch], -1.0, 1.0);
    trial(vec![volume, coords], move |t, v| {
        let r = t.sample3d(v[0], v[1])?;
        weighted(t, r, &w)
    })
}

fn concat(rng: &mut SeededRng) -> Result<Trial> {
    let rows = dim(rng, 1, 4);
    let parts = dim(rng, 2, 3);
    let widths: Vec<usize> = (0..parts).map(|_| dim(rng, 1, 3)).collect();
    let params: Vec<Tensor> = widths.iter().map(|&c| uniform(rng, &[rows, c], -1.0, 1.0)).collect();
    let w = uniform(rng, &[rows, widths.iter().sum()], -1.0, 1.0);
    trial(params, move |t, v| {
        let r = t.concat(v)?;
        weighted(t, r, &w)
    })
}

fn narrow(rng: &mut SeededRng) -> Result<Trial> {
    let (rows, cols) = (dim(rng, 1, 4), dim(rng, 2, 6));
    let start = rng.below(cols);
    let len = dim(rng, 1, cols - start);
    let x = uniform(rng, &[rows, cols], -1.0, 1.0);
    let w = uniform(rng, &[rows, len], -1.0, 1.0);
    trial(vec![x], move |t, v| {
        let r = t.narrow(v[0], start, len)?;
        weighted(t, r, &w)
    })
}

fn reshape(rng: &mut SeededRng) -> Result<Trial> {
    let (a, b, c) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
    let x = uniform(rng, &[a, b, c], -1.0, 1.0);
    let w = uniform(rng, &[a * b, c], -1.0, 1.0);
    trial(vec![x], move |t, v| {
        let r = t.reshape(v[0], &[a * b, c])?;
        weighted(t, r, &w)
    })
}

fn mask_blend(rng: &mut SeededRng) -> Result<Trial> {
    let (h, w, c) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
    let mask = uniform(rng, &[h, w, 1], 0.05, 0.95);
    let a = uniform(rng, &[h, w, c], -1.0, 1.0);
    let b = uniform(rng, &[h, w, c], -1.0, 1.0);
    let wt = uniform(rng, &[h, w, c], -1.0, 1.0);
    trial(vec![mask, a, b], move |t, v| {
        let r = t.mask_blend(v[0], v[1], v[2])?;
        weighted(t, r, &wt)
    })
}

fn sum(rng: &mut SeededRng) -> Result<Trial> {
    let s = matrix_shape(rng);
    let x = uniform(rng, &s, -1.0, 1.0);
    trial(vec![x], |t, v| {
        let s = t.sum(v[0])?;
        t.square(s)
    })
}

fn mse(rng: &mut SeededRng) -> Result<Trial> {
    let s = [dim(rng, 1, 3), dim(rng, 1, 3), 3];
    let a = uniform(rng, &s, 0.0, 1.0);
    let b = uniform(rng, &s, 0.0, 1.0);
    trial(vec![a, b], |t, v| t.mse(v[0], v[1]))
}

fn forward_warp(rng: &mut SeededRng) -> Result<Trial> {
    let (h, w, c) = (dim(rng, 2, 5), dim(rng, 2, 5), dim(rng, 1, 3));
    let feats = uniform(rng, &[h, w, c], -1.0, 1.0);
    let flow: Vec<Scalar> = (0..h * w * 2).map(|_| offset(rng)).collect();
    let flow = Tensor::new(&[h, w, 2], flow)?;
    let wt = uniform(rng, &[h, w, c], -1.0, 1.0);
    trial(vec![feats, flow], move |t, v| {
        let r = t.forward_warp(v[0], v[1])?;
        weighted(t, r, &wt)
    })
}

/// A tiny configuration of `family` with a trial-specific seed.
fn tiny_rep(rng: &mut SeededRng, family: Family) -> Result<Representation> {
    let mut cfg = RepConfig::new(
        family,
        VideoGeometry {
            frames: 3,
            height: 4,
            width: 5,
        },
    );
    cfg.seed = rng.below(1 << 30) as u64;
    cfg.decoder.hidden_channels = 2;
    cfg.triplane.resolution = 3;
    cfg.triplane.channels = 2;
    cfg.voxel.resolution = 3;
    cfg.voxel.channels = 2;
    cfg.posenc.frequencies = 2;
    cfg.posenc.hidden_width = 4;
    cfg.flow.global_resolution = 3;
    cfg.flow.global_channels = 2;
    cfg.flow.motion_resolution = 3;
    cfg.flow.motion_channels = 1;
    cfg.flow.hidden_width = 3;
    Representation::new(cfg)
}

/// Split `rep`'s parameters into the checked tensors (`names`) and a closure
/// argument layout that rebuilds the full [`ParamVars`].
fn param_split(rep: &Representation, names: &[&str]) -> (Vec<Tensor>, Vec<String>, Vec<(String, Tensor)>) {
    let mut checked = Vec::new();
    let mut checked_names = Vec::new();
    let mut fixed = Vec::new();
    for (n, t) in rep.params().iter() {
        if names.is_empty() || names.contains(&n) {
            checked.push(t.clone());
            checked_names.push(n.to_string());
        } else {
            fixed.push((n.to_string(), t.clone()));
        }
    }
    (checked, checked_names, fixed)
}

fn record_vars(tape: &mut Tape, v: &[Var], names: &[String], fixed: &[(String, Tensor)]) -> ParamVars {
    let mut pairs: Vec<(String, Var)> = names.iter().cloned().zip(v.iter().copied()).collect();
    pairs.extend(fixed.iter().map(|(n, t)| (n.clone(), tape.constant(t.clone()))));
    ParamVars::new(pairs)
}

const FLOW_PARAMS: [&str; 7] = [
    motion::MOTION_XY,
    motion::MOTION_XT,
    motion::MOTION_YT,
    motion::FLOW_W0,
    motion::FLOW_B0,
    motion::FLOW_W1,
    motion::FLOW_B1,
];

fn flow_decoder(rng: &mut SeededRng) -> Result<Trial> {
    let rep = tiny_rep(rng, Family::TriPlaneFlow)?;
    let s = rng.below(rep.config().time_slices());
    let (params, names, fixed) = param_split(&rep, &FLOW_PARAMS);
    let cfg = rep.config().clone();
    let n = cfg.flow.global_resolution;
    let w = uniform(rng, &[n, n, 5], -1.0, 1.0);
    trial(params, move |t, v| {
        let vars = record_vars(t, v, &names, &fixed);
        let f = motion::decode_flow_on_tape(t, &vars, &cfg, s)?;
        let all = t.concat(&[f.local, f.global, f.mask])?;
        weighted(t, all, &w)
    })
}

fn recurrence(rng: &mut SeededRng) -> Result<Trial> {
    let rep = tiny_rep(rng, Family::TriPlaneFlow)?;
    let mut names = FLOW_PARAMS.to_vec();
    names.push(motion::GLOBAL_PLANE);
    let (params, names, fixed) = param_split(&rep, &names);
    let cfg = rep.config().clone();
    let (n, c) = (cfg.flow.global_resolution, cfg.flow.global_channels);
    let slices = cfg.time_slices();
    let weights: Vec<Tensor> = (0..slices).map(|_| uniform(rng, &[n, n, c], -1.0, 1.0)).collect();
    trial(params, move |t, v| {
        let vars = record_vars(t, v, &names, &fixed);
        let vol = motion::recurrence_on_tape(t, &vars, &cfg, slices - 1)?;
        let mut total = weighted(t, vol[0], &weights[0])?;
        for (s, w) in vol.iter().zip(&weights).skip(1) {
            let r = weighted(t, *s, w)?;
            total = t.add(total, r)?;
        }
        Ok(total)
    })
}

fn render(rng: &mut SeededRng, family: Family) -> Result<Trial> {
    let rep = tiny_rep(rng, family)?;
    let g = rep.config().video;
    let targets: Vec<Tensor> = (0..g.frames)
        .map(|_| uniform(rng, &[g.height, g.width, 3], 0.0, 1.0))
        .collect();
    let times: Vec<Scalar> = (0..g.frames).map(|k| crate::repr::frame_time(k, g.frames)).collect();
    let (params, names, fixed) = param_split(&rep, &[]);
    trial(params, move |t, v| {
        let vars = record_vars(t, v, &names, &fixed);
        let frames = rep.render_on_tape(t, &vars, &times)?;
        let mut total = None;
        for (f, target) in frames.into_iter().zip(&targets) {
            let target = t.constant(target.clone());
            let l = t.mse(f, target)?;
            total = Some(match total {
                Some(acc) => t.add(acc, l)?,
                None => l,
            });
        }
        Ok(total.expect("at least two frames"))
    })
}
