//! Dense feature-volume baseline with the same decoder as the tri-plane.

use super::{decoder, feature_normal, pixel_grid, ParamStore, ParamVars, RepConfig};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Volume indexed `(t, y, x)`.
pub const VOLUME: &str = "volume";

pub(crate) fn init(cfg: &RepConfig, params: &mut ParamStore, rng: &mut SeededRng) {
    let v = &cfg.voxel;
    let d = v.resolution;
    params.insert(VOLUME, feature_normal(&[d, d, d, v.channels], rng));
    decoder::init(params, v.channels, cfg.decoder.hidden_channels, rng);
}

pub fn feature_frame(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &RepConfig,
    t: Scalar,
    height: usize,
    width: usize,
) -> Result<Var> {
    let d = cfg.voxel.resolution;
    let volume = vars.get(VOLUME)?;
    let tc = t.clamp(0.0, 1.0) * (d - 1) as Scalar;
    let grid = pixel_grid(height, width, d, d);
    let coords: Vec<Scalar> = grid
        .data()
        .chunks_exact(2)
        .flat_map(|p| [p[0], p[1], tc])
        .collect();
    let coords = tape.constant(Tensor::new(&[height, width, 3], coords)?);
    tape.sample3d(volume, coords)
}
