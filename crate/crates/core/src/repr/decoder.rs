//! Convolutional frame decoder shared by the grid-based families.
//!
//! Two 3×3 convolution blocks with leaky-ReLU(0.2), a 1×1 RGB head and a
//! sigmoid. Spatial extent is preserved.

use super::{he_normal, ParamStore, ParamVars};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

pub const LEAKY_SLOPE: Scalar = 0.2;

const NAMES: [&str; 6] = [
    "decoder.block1.weight",
    "decoder.block1.bias",
    "decoder.block2.weight",
    "decoder.block2.bias",
    "decoder.head.weight",
    "decoder.head.bias",
];

/// Parameter count of a decoder taking `input` channels.
pub fn param_count(input: usize, hidden: usize) -> usize {
    9 * input * hidden + hidden + 9 * hidden * hidden + hidden + hidden * 3 + 3
}

pub(crate) fn init(params: &mut ParamStore, input: usize, hidden: usize, rng: &mut SeededRng) {
    params.insert(NAMES[0], he_normal(&[3, 3, input, hidden], 9 * input, rng));
    params.insert(NAMES[1], Tensor::zeros(&[hidden]));
    params.insert(NAMES[2], he_normal(&[3, 3, hidden, hidden], 9 * hidden, rng));
    params.insert(NAMES[3], Tensor::zeros(&[hidden]));
    params.insert(NAMES[4], he_normal(&[1, 1, hidden, 3], hidden, rng));
    params.insert(NAMES[5], Tensor::zeros(&[3]));
}

/// Tape handles of the decoder weights.
#[derive(Debug, Clone, Copy)]
pub struct FrameDecoder {
    vars: [Var; 6],
}

impl FrameDecoder {
    pub fn from_vars(vars: &ParamVars) -> Result<Self> {
        let mut out = [vars.get(NAMES[0])?; 6];
        for (slot, name) in out.iter_mut().zip(NAMES) {
            *slot = vars.get(name)?;
        }
        Ok(FrameDecoder { vars: out })
    }

    /// Decode `[h, w, c_in]` features into an `[h, w, 3]` frame in (0, 1).
    pub fn decode(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let [w1, b1, w2, b2, wh, bh] = self.vars;
        let want = tape.value(w1).shape()[2];
        let got = tape.value(features).channels();
        if want != got {
            return Err(Error::ShapeMismatch {
                op: "decode_frame",
                lhs: tape.value(features).shape().to_vec(),
                rhs: tape.value(w1).shape().to_vec(),
            });
        }
        let h = tape.conv2d(features, w1, b1)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = tape.conv2d(h, w2, b2)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = tape.conv2d(h, wh, bh)?;
        tape.sigmoid(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_decoder(input: usize, hidden: usize) -> ParamStore {
        let mut p = ParamStore::default();
        init(&mut p, input, hidden, &mut SeededRng::new(0, 0));
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    #[test]
    fn zero_weights_give_half_grey() {
        let p = zero_decoder(4, 3);
        let mut tape = Tape::new();
        let vars = p.record(&mut tape, false);
        let f = tape.constant(Tensor::zeros(&[5, 6, 4]));
        let out = FrameDecoder::from_vars(&vars).unwrap().decode(&mut tape, f).unwrap();
        assert_eq!(tape.value(out).shape(), &[5, 6, 3]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_stays_inside_unit_interval() {
        let mut p = ParamStore::default();
        init(&mut p, 2, 4, &mut SeededRng::new(3, 0));
        let mut tape = Tape::new();
        let vars = p.record(&mut tape, false);
        let mut rng = SeededRng::new(9, 9);
        let f = Tensor::new(&[4, 4, 2], (0..32).map(|_| rng.normal(3.0)).collect()).unwrap();
        let f = tape.constant(f);
        let out = FrameDecoder::from_vars(&vars).unwrap().decode(&mut tape, f).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let p = zero_decoder(4, 3);
        let mut tape = Tape::new();
        let vars = p.record(&mut tape, false);
        let f = tape.constant(Tensor::zeros(&[3, 3, 5]));
        assert!(FrameDecoder::from_vars(&vars).unwrap().decode(&mut tape, f).is_err());
    }

    #[test]
    fn count_matches_initialized_tensors() {
        let mut p = ParamStore::default();
        init(&mut p, 24, 32, &mut SeededRng::new(0, 0));
        assert_eq!(p.total_len(), param_count(24, 32));
    }
}
