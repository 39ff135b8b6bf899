//! Parameter updates: Adam for the hypernetwork phase, Nesterov momentum
//! for retraining, and the cosine annealing schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerMode {
    Adam,
    Nesterov,
}

/// Hyperparameters. The Adam defaults are the published initial parameters
/// the training setup delegates to; Nesterov defaults to step 0.1 with
/// momentum 0.9.
#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    pub mode: OptimizerMode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            mode: OptimizerMode::Adam,
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.0,
        }
    }

    pub fn adam_default() -> Self {
        Self::adam(2e-4)
    }

    pub fn nesterov(lr: f64, momentum: f64) -> Self {
        OptimizerConfig {
            mode: OptimizerMode::Nesterov,
            lr,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            momentum,
        }
    }

    pub fn nesterov_default() -> Self {
        Self::nesterov(0.1, 0.9)
    }
}

struct Slot<T: Scalar> {
    /// First moment (Adam) or velocity (Nesterov).
    m: Vec<T>,
    /// Second moment (Adam only).
    v: Vec<T>,
    /// Per-parameter step count for bias correction. Parameters that a
    /// sampled architecture never touched keep their count.
    step: u64,
}

/// Moment buffers for a fixed parameter list. Parameters whose gradient is
/// absent for a step (not reached by the tape) are skipped.
pub struct Optimizer<T: Scalar> {
    pub config: OptimizerConfig,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &[Tensor<T>]) -> Self {
        let slots = params
            .iter()
            .map(|p| {
                let need_v = config.mode == OptimizerMode::Adam;
                Slot {
                    m: vec![T::zero(); p.numel()],
                    v: if need_v { vec![T::zero(); p.numel()] } else { Vec::new() },
                    step: 0,
                }
            })
            .collect();
        Optimizer { config, slots }
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Apply one update with the given learning rate (the schedule decides
    /// it per step).
    pub fn step(&mut self, params: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.slots.len() {
            return Err(Error::OptimizerStateMismatch {
                expected: self.slots.len(),
                got: params.len(),
            });
        }
        let lr_t = T::from_f64(lr);
        for (p, slot) in params.iter().zip(&mut self.slots) {
            if slot.m.len() != p.numel() {
                return Err(Error::OptimizerStateMismatch {
                    expected: slot.m.len(),
                    got: p.numel(),
                });
            }
            let Some(grad) = p.grad() else { continue };
            match self.config.mode {
                OptimizerMode::Adam => {
                    slot.step += 1;
                    let b1 = T::from_f64(self.config.beta1);
                    let b2 = T::from_f64(self.config.beta2);
                    let eps = T::from_f64(self.config.eps);
                    let corr1 = T::one() - T::from_f64(libm::pow(self.config.beta1, slot.step as f64));
                    let corr2 = T::one() - T::from_f64(libm::pow(self.config.beta2, slot.step as f64));
                    p.update_data(|data| {
                        for i in 0..data.len() {
                            let g = grad[i];
                            slot.m[i] = b1 * slot.m[i] + (T::one() - b1) * g;
                            slot.v[i] = b2 * slot.v[i] + (T::one() - b2) * g * g;
                            let m_hat = slot.m[i] / corr1;
                            let v_hat = slot.v[i] / corr2;
                            data[i] = data[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
                        }
                    });
                }
                OptimizerMode::Nesterov => {
                    slot.step += 1;
                    let mu = T::from_f64(self.config.momentum);
                    p.update_data(|data| {
                        for i in 0..data.len() {
                            let g = grad[i];
                            slot.m[i] = mu * slot.m[i] + g;
                            data[i] = data[i] - lr_t * (g + mu * slot.m[i]);
                        }
                    });
                }
            }
        }
        Ok(())
    }

    /// Flatten the optimizer state for checkpointing: per parameter
    /// `(first moment, second moment, step)`.
    pub fn export_state(&self) -> Vec<(Vec<T>, Vec<T>, u64)> {
        self.slots.iter().map(|s| (s.m.clone(), s.v.clone(), s.step)).collect()
    }

    pub fn import_state(&mut self, state: Vec<(Vec<T>, Vec<T>, u64)>) -> Result<()> {
        if state.len() != self.slots.len() {
            return Err(Error::OptimizerStateMismatch {
                expected: self.slots.len(),
                got: state.len(),
            });
        }
        for (slot, (m, v, step)) in self.slots.iter_mut().zip(state) {
            if m.len() != slot.m.len() || v.len() != slot.v.len() {
                return Err(Error::OptimizerStateMismatch {
                    expected: slot.m.len(),
                    got: m.len(),
                });
            }
            slot.m = m;
            slot.v = v;
            slot.step = step;
        }
        Ok(())
    }
}

/// Cosine annealing without restarts: `0.5 * lr0 * (1 + cos(pi * t / total))`.
pub fn cosine_anneal(lr0: f64, t: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Invalid { what: "cosine_anneal", detail: "total steps must be > 0".into() });
    }
    if t > total {
        return Err(Error::SchedulePastEnd { t, total });
    }
    Ok(0.5 * lr0 * (1.0 + libm::cos(core::f64::consts::PI * t as f64 / total as f64)))
}
