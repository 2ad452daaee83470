//! Adam and a plateau learning-rate scheduler.

use crate::blocks::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Bias-corrected Adam over the trainable entries of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub ids: Vec<ParamId>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let ids = store.trainable_ids();
        let zeros: Vec<Tensor> = ids.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, ids, m: zeros.clone(), v: zeros }
    }

    /// One update; `grads` follow `self.ids`. Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.ids.len() {
            return Err(Error::arg(format!("adam: {} gradients for {} parameters", grads.len(), self.ids.len())));
        }
        for (&id, g) in self.ids.iter().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::arg(format!("adam: gradient shape {:?} for {}", g.shape(), store.name(id))));
            }
            if !g.all_finite() {
                return Err(Error::numeric(format!("non-finite gradient for {}", store.name(id))));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (&id, g)) in self.ids.iter().zip(grads).enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// a strict improvement of the validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        Self { lr, patience: 4, factor: 0.5, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore, ParamId, ParamId) {
        let mut s = ParamStore::new();
        let a = s.add_param("a", Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25]).unwrap()).unwrap();
        s.add_buffer("buf", Tensor::zeros(&[2])).unwrap();
        let b = s.add_param("b", Tensor::from_vec(vec![1.0])).unwrap();
        (s, a, b)
    }

    #[test]
    fn first_step_closed_form() {
        let (mut s, a, b) = store();
        let before = s.clone();
        let mut adam = AdamState::new(&s, 0.01);
        assert_eq!(adam.ids, vec![a, b]);
        adam.step(&mut s, &[Tensor::full(&[2, 3], 1.0), Tensor::full(&[1], 1.0)]).unwrap();
        let want = 0.01 / (1.0 + 1e-8);
        for id in [a, b] {
            for (p, q) in s.get(id).data().iter().zip(before.get(id).data()) {
                assert!((q - p - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_gradients_leave_params_and_count_steps() {
        let (mut s, _, _) = store();
        let before = s.clone();
        let mut adam = AdamState::new(&s, 0.01);
        adam.step(&mut s, &[Tensor::zeros(&[2, 3]), Tensor::zeros(&[1])]).unwrap();
        assert_eq!(s, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let (mut s, _, _) = store();
        let before = s.clone();
        let mut adam = AdamState::new(&s, 0.01);
        let mut g = Tensor::zeros(&[2, 3]);
        g.data_mut()[4] = f64::NAN;
        let err = adam.step(&mut s, &[g, Tensor::zeros(&[1])]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        let err = adam.step(&mut s, &[Tensor::zeros(&[2, 3]), Tensor::full(&[1], f64::INFINITY)]).unwrap_err();
        assert!(err.to_string().contains('b'));
        assert_eq!(s, before);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let run = || {
            let (mut s, _, _) = store();
            let mut adam = AdamState::new(&s, 0.05);
            for k in 0..20 {
                let g: Vec<Tensor> = adam.ids.iter().map(|&id| s.get(id).map(|x| x * x - 0.1 * k as f64)).collect();
                adam.step(&mut s, &g).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn decreasing_losses_keep_lr() {
        let mut s = PlateauScheduler::new(2e-4);
        for l in [5.0, 4.0, 3.0, 2.0, 1.0, 0.5, 0.1] {
            assert_eq!(s.step(l), 2e-4);
        }
    }

    #[test]
    fn halves_exactly_after_four_flat_epochs() {
        let mut s = PlateauScheduler::new(2e-4);
        let lrs: Vec<f64> = [5.0; 5].iter().map(|&l| s.step(l)).collect();
        assert_eq!(lrs, vec![2e-4, 2e-4, 2e-4, 2e-4, 1e-4]);
    }

    #[test]
    fn two_plateaus_quarter_the_rate() {
        let mut s = PlateauScheduler::new(2e-4);
        let mut lr = 0.0;
        for l in [1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 1.5, 1.0, 1.0] {
            lr = s.step(l);
        }
        assert_eq!(lr, 5e-5);
    }
}
