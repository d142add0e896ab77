use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every tensor in `params`; `grads` follows
/// the store's order.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((_, p), (g, m)) in params.iter().zip(grads.iter().zip(&state.m)) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite { op: "adam_step" });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let (b1, b2) = (hyper.beta1 as Scalar, hyper.beta2 as Scalar);
    for (((_, p), g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let m_hat = md[i] as f64 / bc1;
            let v_hat = vd[i] as f64 / bc2;
            pd[i] -= (hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps)) as Scalar;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(x: Scalar) -> ParamStore {
        let mut s = ParamStore::default();
        s.insert("x", Tensor::from_vec(vec![x]));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(0.0);
        let mut st = AdamState::new(&p);
        let hyper = AdamHyper { lr: 0.1, ..Default::default() };
        adam_step(&mut p, &[Tensor::from_vec(vec![1.0])], &mut st, &hyper).unwrap();
        let x = p.get("x").unwrap().data()[0];
        assert!((x - -0.1).abs() < 1e-6, "{x}");
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store(0.75);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::from_vec(vec![0.0])], &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[0.75]);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = store(0.0);
        let mut st = AdamState::new(&p);
        let g = Tensor::from_vec(vec![Scalar::NAN]);
        assert!(adam_step(&mut p, &[g], &mut st, &AdamHyper::default()).is_err());
        assert_eq!(p.get("x").unwrap().data(), &[0.0]);
    }
}
