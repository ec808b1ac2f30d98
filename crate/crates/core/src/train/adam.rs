use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Moment estimates of the Adam optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update with learning rate `lr`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("adam", &[params.len()], &[grads.len()]));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v));
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(1.0);
        let mut adam = AdamState::new(&p);
        let g = vec![Tensor::scalar(1.0)];
        adam.step(&mut p, &g, 0.01).unwrap();
        let moved = 1.0 - p.get(crate::autodiff::ParamId(0)).data()[0];
        assert!((moved - 0.01).abs() < 1e-9);
        for _ in 0..10 {
            let before = p.tensors()[0].data()[0];
            adam.step(&mut p, &g, 0.01).unwrap();
            assert!((before - p.tensors()[0].data()[0] - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradient_and_zero_rate_leave_params_unchanged() {
        let mut p = scalar_store(0.3);
        let mut adam = AdamState::new(&p);
        adam.step(&mut p, &[Tensor::scalar(0.0)], 0.1).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 0.3);
        adam.step(&mut p, &[Tensor::scalar(2.0)], 0.0).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 0.3);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = scalar_store(0.3);
        let mut adam = AdamState::new(&p);
        assert!(adam.step(&mut p, &[Tensor::zeros(&[2])], 0.1).is_err());
    }
}
