//! Adam with a Noam-style warmup schedule and global gradient clipping.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Learning rate reached at the end of warmup.
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global L2 norm of the gradient; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            warmup_steps: 400,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            grad_clip: 1.0,
        }
    }
}

impl OptimizerConfig {
    /// Linear warmup to `peak_lr`, then decay with the inverse square root
    /// of the step. Steps count from 1.
    pub fn learning_rate(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        if self.warmup_steps == 0 {
            return self.peak_lr / libm::sqrt(s);
        }
        let w = self.warmup_steps as f64;
        self.peak_lr * libm::fmin(s / w, libm::sqrt(w / s))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.peak_lr > 0.0
            && self.peak_lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.grad_clip >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

/// Per-parameter gradient sums, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    grads: Vec<Matrix>,
}

impl GradientBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.iter().map(|(_, _, v)| Matrix::zeros(v.rows(), v.cols())).collect(),
        }
    }

    /// Adds `weight · ∂L/∂θ` for every parameter reached by `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, weight: f64) {
        for (id, g) in grads.params() {
            let dst = self.grads[id.index()].as_mut_slice();
            for (d, s) in dst.iter_mut().zip(g.as_slice()) {
                *d += weight * s;
            }
        }
    }

    pub fn get(&self, index: usize) -> &Matrix {
        &self.grads[index]
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.grads.iter().flat_map(|g| g.as_slice()).map(|v| v * v).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Matrix::is_finite)
    }
}

/// Result of one update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateInfo {
    pub step: u64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros = || store.iter().map(|(_, _, v)| Matrix::zeros(v.rows(), v.cols())).collect();
        Ok(Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    /// Restores saved moments; shapes must match the store.
    pub fn from_state(config: OptimizerConfig, step: u64, m: Vec<Matrix>, v: Vec<Matrix>, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let shapes_ok = m.len() == store.len()
            && v.len() == store.len()
            && store
                .iter()
                .all(|(id, _, p)| m[id.index()].shape() == p.shape() && v[id.index()].shape() == p.shape());
        if !shapes_ok {
            return Err(Error::Config("optimizer state does not match the parameters".into()));
        }
        Ok(Self { config, step, m, v })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }

    /// Clips, then applies one Adam update. Non-finite gradients leave the
    /// parameters untouched.
    pub fn update(&mut self, store: &mut ParamStore, grads: &GradientBuffer) -> Result<UpdateInfo> {
        if !grads.is_finite() {
            return Err(Error::NonFinite { component: "gradient" });
        }
        let c = self.config;
        let norm = grads.global_norm();
        let clip = if c.grad_clip > 0.0 && norm > c.grad_clip {
            c.grad_clip / norm
        } else {
            1.0
        };
        self.step += 1;
        let lr = c.learning_rate(self.step);
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(c.beta1, t);
        let bc2 = 1.0 - libm::pow(c.beta2, t);
        for i in 0..store.len() {
            let id = crate::params::ParamId::new(i);
            let g = grads.get(i).as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            let p = store.value_mut(id).as_mut_slice();
            for k in 0..p.len() {
                let gk = g[k] * clip;
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr * mh / (libm::sqrt(vh) + c.eps);
            }
        }
        Ok(UpdateInfo { step: self.step, lr, grad_norm: norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn schedule_peaks_at_warmup() {
        let c = OptimizerConfig {
            peak_lr: 0.01,
            warmup_steps: 100,
            ..OptimizerConfig::default()
        };
        assert!((c.learning_rate(50) - 0.005).abs() < 1e-15);
        assert!((c.learning_rate(100) - 0.01).abs() < 1e-15);
        assert!((c.learning_rate(400) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.register("w", Matrix::from_vec(1, 2, alloc::vec![1.0, -1.0]));
        let cfg = OptimizerConfig {
            peak_lr: 0.1,
            warmup_steps: 0,
            grad_clip: 0.0,
            ..OptimizerConfig::default()
        };
        let mut adam = Adam::new(cfg, &store).unwrap();
        let grads = {
            let mut g = Graph::new(&store);
            let w = g.param(id);
            let l = g.square(w);
            let l = g.sum(l);
            g.backward(l)
        };
        let mut buf = GradientBuffer::zeros_like(&store);
        buf.accumulate(&grads, 1.0);
        assert_eq!(buf.get(0).as_slice(), &[2.0, -2.0]);
        adam.update(&mut store, &buf).unwrap();
        let w = store.value(id).as_slice();
        assert!((w[0] - 0.9).abs() < 1e-9 && (w[1] + 0.9).abs() < 1e-9);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut store = ParamStore::new();
        store.register("w", Matrix::zeros(1, 2));
        let mut buf = GradientBuffer::zeros_like(&store);
        buf.grads[0] = Matrix::from_vec(1, 2, alloc::vec![30.0, 40.0]);
        let mut adam = Adam::new(OptimizerConfig::default(), &store).unwrap();
        let info = adam.update(&mut store, &buf).unwrap();
        assert_eq!(info.grad_norm, 50.0);
        // after clipping the first moment holds (1-β1)·g·(1/50)
        assert!((adam.first_moments()[0][(0, 0)] - 0.1 * 0.6).abs() < 1e-12);
        buf.grads[0] = Matrix::from_vec(1, 2, alloc::vec![f64::NAN, 0.0]);
        let before = store.clone();
        assert!(adam.update(&mut store, &buf).is_err());
        assert_eq!(store, before);
    }
}
