//! SGD with momentum and weight decay, the warm-up/linear-decay learning
//! rate schedule and global-norm gradient clipping.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::real::math;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.05, momentum: 0.9, weight_decay: 5e-4 }
    }
}

/// Per-iteration schedule: linear ramp to `base` over `warmup` iterations,
/// then linear decay reaching zero at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(base: f64, warmup: usize, total: usize) -> Result<Self> {
        if total == 0 || warmup >= total {
            return Err(Error::Config("schedule needs warmup < total iterations".into()));
        }
        Ok(Self { base, warmup, total })
    }

    /// Learning rate for iteration `it` (0-based). `lr(warmup) == base`.
    pub fn lr(&self, it: usize) -> f64 {
        if it < self.warmup {
            self.base * (it + 1) as f64 / (self.warmup + 1) as f64
        } else if it >= self.total {
            0.0
        } else {
            self.base * (self.total - it) as f64 / (self.total - self.warmup) as f64
        }
    }
}

pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(config: SgdConfig, store: &ParamStore<T>) -> Self {
        Self { config, velocity: alloc::vec![None; store.len()] }
    }

    /// `v = momentum * v + (g + wd * w)`, `w -= lr * v` for every weight with
    /// a gradient. Buffers are never touched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Usage("gradient list does not match the parameter store".into()));
        }
        let (mu, wd, lr) = (T::cst(self.config.momentum), T::cst(self.config.weight_decay), T::cst(lr));
        for ((entry, grad), vel) in store.entries_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            let Some(g) = grad else { continue };
            if entry.kind != ParamKind::Weight {
                continue;
            }
            let v = vel.get_or_insert_with(|| Tensor::zeros(g.shape()));
            for ((w, &gi), vi) in entry.tensor.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = mu * *vi + gi + wd * *w;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}

pub fn global_norm<T: Real>(grads: &[Option<Tensor<T>>]) -> f64 {
    let sq: f64 = grads.iter().flatten().flat_map(|g| g.data().iter()).map(|&v| v.as_f64() * v.as_f64()).sum();
    math::sqrt(sq)
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::cst(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(0.05, 10, 110).unwrap();
        assert_eq!(s.lr(10), 0.05);
        assert!((s.lr(0) - 0.05 / 11.0).abs() < 1e-15);
        assert!((s.lr(60) - 0.05 * 0.5).abs() < 1e-15);
        assert_eq!(s.lr(110), 0.0);
        assert!((1..110).all(|i| i <= 10 && s.lr(i) > s.lr(i - 1) || i > 10 && s.lr(i) < s.lr(i - 1)));
        assert!(LrSchedule::new(0.1, 5, 5).is_err());
        let flat = LrSchedule::new(0.1, 0, 4).unwrap();
        assert_eq!(flat.lr(0), 0.1);
    }

    #[test]
    fn momentum_steps_by_hand() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_f64(&[2], &[1.0, -2.0]).unwrap(), ParamKind::Weight);
        store.add("rm", Tensor::from_f64(&[1], &[3.0]).unwrap(), ParamKind::Buffer);
        let mut opt = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.5, weight_decay: 0.1 }, &store);
        let grads = alloc::vec![Some(Tensor::from_f64(&[2], &[0.5, 1.0]).unwrap()), Some(Tensor::ones(&[1]))];
        opt.step(&mut store, &grads, 0.1).unwrap();
        // v1 = g + wd*w = [0.6, 0.8]; w = [0.94, -2.08]
        let w = store.entries()[0].tensor.data().to_vec();
        assert!((w[0] - 0.94).abs() < 1e-15 && (w[1] + 2.08).abs() < 1e-15);
        opt.step(&mut store, &grads, 0.1).unwrap();
        // v2 = 0.5*v1 + g + wd*w1
        let v2 = [0.3 + 0.5 + 0.094, 0.4 + 1.0 - 0.208];
        let w2 = store.entries()[0].tensor.data();
        assert!((w2[0] - (0.94 - 0.1 * v2[0])).abs() < 1e-15);
        assert!((w2[1] - (-2.08 - 0.1 * v2[1])).abs() < 1e-15);
        assert_eq!(store.entries()[1].tensor.data(), &[3.0]);
        assert!(opt.step(&mut store, &grads[..1], 0.1).is_err());
    }

    #[test]
    fn clipping_rescales_to_max_norm() {
        let mut grads = alloc::vec![
            Some(Tensor::<f64>::from_f64(&[2], &[3.0, 0.0]).unwrap()),
            None,
            Some(Tensor::from_f64(&[1], &[4.0]).unwrap())
        ];
        assert_eq!(clip_global_norm(&mut grads, 10.0), 5.0);
        assert_eq!(global_norm(&grads), 5.0);
        assert_eq!(clip_global_norm(&mut grads, 1.0), 5.0);
        assert!((global_norm(&grads) - 1.0).abs() < 1e-15);
        assert!((grads[0].as_ref().unwrap().data()[0] - 0.6).abs() < 1e-15);
    }
}
