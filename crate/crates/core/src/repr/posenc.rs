//! Fully implicit baseline: an MLP on sinusoidally encoded `(x, y, t)`.

use std::f64::consts::PI;

use super::{decoder::LEAKY_SLOPE, he_normal, ParamStore, ParamVars, PosEncConfig, RepConfig};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// `[x, y, t, sin(2^l π u), cos(2^l π u) for l in 0..L, u in {x, y, t}]`.
pub fn positional_encoding(x: Scalar, y: Scalar, t: Scalar, frequencies: usize) -> Vec<Scalar> {
    let mut out = Vec::with_capacity(6 * frequencies + 3);
    out.extend([x, y, t]);
    for u in [x, y, t] {
        for l in 0..frequencies {
            let a = (2.0f64.powi(l as i32) * PI * u as f64) as Scalar;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
    out
}

pub fn layer_name(i: usize, what: &str) -> String {
    format!("mlp.{i}.{what}")
}

fn widths(p: &PosEncConfig) -> Vec<usize> {
    let mut w = vec![p.encoding_width()];
    w.extend(std::iter::repeat_n(p.hidden_width, p.hidden_layers));
    w.push(3);
    w
}

pub fn param_count(p: &PosEncConfig) -> usize {
    widths(p).windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub(crate) fn init(cfg: &RepConfig, params: &mut ParamStore, rng: &mut SeededRng) {
    for (i, w) in widths(&cfg.posenc).windows(2).enumerate() {
        params.insert(layer_name(i, "weight"), he_normal(&[w[0], w[1]], w[0], rng));
        params.insert(layer_name(i, "bias"), Tensor::zeros(&[w[1]]));
    }
}

pub(crate) fn render(tape: &mut Tape, vars: &ParamVars, cfg: &RepConfig, t: Scalar) -> Result<Var> {
    let (h, w) = (cfg.video.height, cfg.video.width);
    let l = cfg.posenc.frequencies;
    let mut enc = Vec::with_capacity(h * w * cfg.posenc.encoding_width());
    for i in 0..h {
        for j in 0..w {
            enc.extend(positional_encoding(
                super::frame_time(j, w),
                super::frame_time(i, h),
                t,
                l,
            ));
        }
    }
    let mut x = tape.constant(Tensor::new(&[h * w, cfg.posenc.encoding_width()], enc)?);
    let layers = cfg.posenc.hidden_layers + 1;
    for i in 0..layers {
        let wv = vars.get(&layer_name(i, "weight"))?;
        let bv = vars.get(&layer_name(i, "bias"))?;
        x = tape.matmul(x, wv)?;
        x = tape.add_bias(x, bv)?;
        x = if i + 1 < layers {
            tape.leaky_relu(x, LEAKY_SLOPE)?
        } else {
            tape.sigmoid(x)?
        };
    }
    tape.reshape(x, &[h, w, 3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_of_origin() {
        assert_eq!(
            positional_encoding(0.0, 0.0, 0.0, 1),
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn encoding_at_one() {
        let e = positional_encoding(1.0, 0.0, 0.0, 1);
        assert!(e[3].abs() < 1e-12 + 4.0 * Scalar::EPSILON);
        assert_eq!(e[4], -1.0);
    }

    #[test]
    fn encoding_width() {
        assert_eq!(positional_encoding(0.1, 0.2, 0.3, 8).len(), 51);
        assert_eq!(PosEncConfig::default().encoding_width(), 51);
    }
}
