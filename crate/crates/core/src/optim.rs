use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Adam over a fixed group of parameters.
///
/// Moment buffers are indexed by position in the group, so the same group
/// ordering must be used on every call (the trainers build groups once).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    /// Applies one update to every parameter in `group`, then clears their grads.
    pub fn step(&mut self, store: &mut ParamStore, group: &[ParamId]) -> Result<()> {
        self.step_with_lr(store, group, self.lr)
    }

    pub fn step_with_lr(&mut self, store: &mut ParamStore, group: &[ParamId], lr: f64) -> Result<()> {
        if let Some(id) = group.iter().find(|id| store.get(**id).grad().is_none()) {
            return Err(Error::MissingGrad {
                param: String::from(store.name(*id)),
            });
        }
        if self.first_moment.is_empty() {
            self.first_moment = group.iter().map(|id| vec![0.0; store.get(*id).numel()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != group.len() {
            return Err(Error::invalid("adam_step", "parameter group changed between steps"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (slot, id) in group.iter().enumerate() {
            let tensor = store.get_mut(*id);
            let grad = tensor.grad().map(<[f64]>::to_vec).unwrap_or_default();
            let m = &mut self.first_moment[slot];
            let v = &mut self.second_moment[slot];
            if m.len() != grad.len() {
                return Err(Error::shape("adam_step", &[m.len()], &[grad.len()]));
            }
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
            if tensor.data().iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite { op: "adam_step" });
            }
            tensor.zero_grad();
        }
        Ok(())
    }

    /// Moment buffers in group order, for checkpointing.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn restore(&mut self, step_count: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<()> {
        if first.len() != second.len() {
            return Err(Error::invalid("adam_restore", "moment buffers disagree"));
        }
        self.step_count = step_count;
        self.first_moment = first;
        self.second_moment = second;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    fn quadratic_grad(store: &mut ParamStore, w: ParamId, target: f64) {
        let mut t = Tape::with_params(store);
        let wv = t.param(w);
        let d = t.add_scalar(wv, -target).unwrap();
        let sq = t.square(d).unwrap();
        let loss = t.sum(sq).unwrap();
        let g = t.backward(loss).unwrap();
        drop(t);
        store.accumulate(&g).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[3], 0.7)).unwrap();
        store.get_mut(w).accumulate_grad(&[0.0; 3]).unwrap();
        let mut adam = Adam::new(0.1);
        adam.step(&mut store, &[w]).unwrap();
        assert_eq!(store.get(w).data(), &[0.7; 3]);
        assert!(store.get(w).grad().is_none());
    }

    #[test]
    fn one_step_descends() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[1], 1.0)).unwrap();
        quadratic_grad(&mut store, w, 0.0);
        Adam::new(0.1).step(&mut store, &[w]).unwrap();
        assert!(store.get(w).data()[0] < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[1], 3.0)).unwrap();
        let mut adam = Adam::new(0.1);
        // minimizer of (w - 1.25)^2 is w* = 1.25
        for _ in 0..200 {
            quadratic_grad(&mut store, w, 1.25);
            adam.step(&mut store, &[w]).unwrap();
        }
        assert!((store.get(w).data()[0] - 1.25).abs() < 1e-2);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[1], 1.0)).unwrap();
        let err = Adam::new(0.1).step(&mut store, &[w]).unwrap_err();
        assert!(matches!(err, Error::MissingGrad { .. }));
    }
}
