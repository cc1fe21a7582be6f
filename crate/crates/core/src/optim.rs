//! Adam and the linear learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Linear warmup from 0 to `base` over `warmup` steps, then linear decay to
/// zero at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub base: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LinearSchedule {
    /// Learning rate for the 0-based optimizer step `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.base * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let done = (step - self.warmup) as f64 / span as f64;
        self.base * (1.0 - done).max(0.0)
    }
}

/// Adam with bias correction. Moments are allocated on the first step.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Default for Adam<F> {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<F: Real> Adam<F> {
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `params` in place. `params` and `grads` must list the
    /// same tensors in the same order on every call.
    pub fn step(&mut self, params: Vec<&mut Tensor<F>>, grads: Vec<&Tensor<F>>, lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} params but {} grads", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Shape("optimizer state does not match parameter list".into()));
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let c1 = F::one() / (F::one() - b1.powi(t));
        let c2 = F::one() / (F::one() - b2.powi(t));
        let (lr, eps) = (F::c(lr), F::c(self.eps));
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Shape(format!("tensor {i}: parameter/gradient size mismatch")));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.data[j];
                m[j] = b1 * m[j] + (F::one() - b1) * gj;
                v[j] = b2 * v[j] + (F::one() - b2) * gj * gj;
                p.data[j] -= lr * (m[j] * c1) / ((v[j] * c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
