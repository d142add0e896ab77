//! Tri-plane family: features on the `xy`, `xt` and `yt` planes, sampled
//! bilinearly at a point's three projections and decoded per frame.

use super::{decoder, feature_normal, pixel_grid, Combine, ParamStore, ParamVars, RepConfig};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Plane names; `xy` is indexed `(y, x)`, `xt` is `(t, x)`, `yt` is `(t, y)`.
pub const PLANE_XY: &str = "plane_xy";
pub const PLANE_XT: &str = "plane_xt";
pub const PLANE_YT: &str = "plane_yt";

pub(crate) fn init(cfg: &RepConfig, params: &mut ParamStore, rng: &mut SeededRng) {
    let t = &cfg.triplane;
    for name in [PLANE_XY, PLANE_XT, PLANE_YT] {
        params.insert(name, feature_normal(&[t.resolution, t.resolution, t.channels], rng));
    }
    decoder::init(params, t.feature_width(), cfg.decoder.hidden_channels, rng);
}

/// Record the three plane samples for `[.., 2]`-shaped `(u, v)` grids and
/// combine them per `combine`.
pub(crate) fn sample_planes(
    tape: &mut Tape,
    planes: [Var; 3],
    coords: [Tensor; 3],
    combine: Combine,
) -> Result<Var> {
    let [cxy, cxt, cyt] = coords;
    let cxy = tape.constant(cxy);
    let cxt = tape.constant(cxt);
    let cyt = tape.constant(cyt);
    let fxy = tape.sample2d(planes[0], cxy)?;
    let fxt = tape.sample2d(planes[1], cxt)?;
    let fyt = tape.sample2d(planes[2], cyt)?;
    match combine {
        Combine::Concat => tape.concat(&[fxy, fxt, fyt]),
        Combine::Sum => {
            let s = tape.add(fxy, fxt)?;
            tape.add(s, fyt)
        }
    }
}

/// Feature frame `[height, width, C_feat]` at normalized time `t`, sampled at
/// pixel centres `x = j / (width - 1)`, `y = i / (height - 1)`.
pub fn feature_frame(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &RepConfig,
    t: Scalar,
    height: usize,
    width: usize,
) -> Result<Var> {
    let n = cfg.triplane.resolution;
    let planes = [vars.get(PLANE_XY)?, vars.get(PLANE_XT)?, vars.get(PLANE_YT)?];
    let tc = t.clamp(0.0, 1.0) * (n - 1) as Scalar;
    let xy = pixel_grid(height, width, n, n);
    let mut xt = xy.clone();
    let mut yt = xy.clone();
    for ((a, b), src) in xt
        .data_mut()
        .chunks_exact_mut(2)
        .zip(yt.data_mut().chunks_exact_mut(2))
        .zip(xy.data().chunks_exact(2))
    {
        // xt plane: column = x, row = t.  yt plane: column = y, row = t.
        a[0] = src[0];
        a[1] = tc;
        b[0] = src[1];
        b[1] = tc;
    }
    sample_planes(tape, planes, [xy, xt, yt], cfg.triplane.combine)
}

/// Feature vector of one point `(x, y, t)` in normalized coordinates.
pub fn triplane_feature(
    params: &ParamStore,
    cfg: &RepConfig,
    x: Scalar,
    y: Scalar,
    t: Scalar,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let planes = [vars.get(PLANE_XY)?, vars.get(PLANE_XT)?, vars.get(PLANE_YT)?];
    let s = (cfg.triplane.resolution - 1) as Scalar;
    let (x, y, t) = (x.clamp(0.0, 1.0) * s, y.clamp(0.0, 1.0) * s, t.clamp(0.0, 1.0) * s);
    let c = |a: Scalar, b: Scalar| Tensor::new(&[1, 2], vec![a, b]).expect("coord shape");
    let out = sample_planes(&mut tape, planes, [c(x, y), c(x, t), c(y, t)], cfg.triplane.combine)?;
    let v = tape.value(out);
    Tensor::new(&[v.len()], v.data().to_vec())
}
