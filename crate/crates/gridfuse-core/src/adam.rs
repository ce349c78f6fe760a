//! Adam optimizer with bias correction and a cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    /// First-moment estimate, one tensor per parameter.
    m: Vec<Tensor>,
    /// Second-moment estimate, one tensor per parameter.
    v: Vec<Tensor>,
    /// Steps taken; strictly increases.
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Base learning rate; the per-step rate is supplied by the caller.
    pub base_lr: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, base_lr: f64) -> AdamState {
        AdamState {
            m: store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
            v: store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
        }
    }

    /// One Adam update with bias correction at rate `lr_now`.
    /// A NaN gradient aborts with the offending parameter named.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr_now: f64) -> Result<()> {
        assert!(lr_now > 0.0, "adam_step: lr_now must be positive");
        assert_eq!(
            grads.len(),
            store.len(),
            "adam_step: gradient count mismatch"
        );
        for (i, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    context: format!(
                        "gradient of parameter '{}'",
                        store.name(crate::nn::ParamId(i))
                    ),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = &mut store.tensors_mut()[i];
            assert_eq!(p.shape(), g.shape(), "adam_step: shape mismatch");
            for k in 0..g.len() {
                let gk = g.data()[k];
                let mk = self.beta1 * m.data()[k] + (1.0 - self.beta1) * gk;
                let vk = self.beta2 * v.data()[k] + (1.0 - self.beta2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let mhat = mk / bc1;
                let vhat = vk / bc2;
                p.data_mut()[k] -= lr_now * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Cosine decay from `lr0` down to `floor_frac * lr0` over `total_steps`.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule {
    pub lr0: f64,
    pub floor_frac: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        let s = (step.min(self.total_steps)) as f64 / self.total_steps.max(1) as f64;
        let floor = self.lr0 * self.floor_frac;
        floor + 0.5 * (self.lr0 - floor) * (1.0 + (std::f64::consts::PI * s).cos())
    }
}
