//! Adam, global-norm clipping and the step-decay learning-rate schedule.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::matrix::Matrix;
use crate::params::{Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    steps: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || Grads::zeros_like(store).0;
        Adam { config, m: zeros(), v: zeros(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected update of every parameter in `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        assert_eq!(grads.0.len(), store.len(), "gradient/parameter count mismatch");
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - math::powi(beta1, self.steps as i32);
        let c2 = 1.0 - math::powi(beta2, self.steps as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.0[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            let p = store.get_mut(id).as_mut_slice();
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= lr * mh / (math::sqrt(vh) + eps);
            }
        }
    }
}

/// Rescales `grads` so the global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// `lr0 · decay^floor(epoch / every)` with 0-indexed epochs.
pub fn lr_schedule(epoch: usize, lr0: f64, decay: f64, every: usize) -> f64 {
    lr0 * math::powi(decay, (epoch / every.max(1)) as i32)
}
