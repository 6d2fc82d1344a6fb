use ndarray::Array2;

use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

/// Adam with bias correction; moments (0.9, 0.999), eps 1e-8.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    step: u64,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let m = store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        let v = store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        Self {
            m,
            v,
            step: 0,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step over every parameter, in registration order.
    /// Rejects the whole step if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: T) -> Result<()> {
        for id in store.ids() {
            if store.grad(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: store.name(id).to_string(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (idx, id) in store.ids().enumerate() {
            let g = store.grad(id).clone();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(&mut *m).and(&g).for_each(|m, &g| {
                *m = self.beta1 * *m + (T::one() - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(&g).for_each(|v, &g| {
                *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
            });
            let value = store.value_mut(id);
            ndarray::Zip::from(value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
        Ok(())
    }
}

/// Cosine-annealing learning-rate schedule with warm restarts.
///
/// Each cycle decays from `base` to `floor` along a half cosine; the cycle
/// length is multiplied by `mult` after every restart.
#[derive(Clone, Copy, Debug)]
pub struct CosineRestarts {
    pub base: f64,
    pub floor: f64,
    pub initial_cycle: usize,
    pub mult: usize,
}

impl CosineRestarts {
    pub fn new(base: f64, floor: f64, initial_cycle: usize, mult: usize) -> Self {
        Self {
            base,
            floor,
            initial_cycle: initial_cycle.max(1),
            mult: mult.max(1),
        }
    }

    /// Learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut rem = epoch;
        let mut cycle = self.initial_cycle;
        while rem >= cycle {
            rem -= cycle;
            cycle = cycle.saturating_mul(self.mult).max(1);
        }
        let phase = std::f64::consts::PI * rem as f64 / cycle as f64;
        self.floor + 0.5 * (self.base - self.floor) * (1.0 + phase.cos())
    }
}
