//! ADADELTA with a global step multiplier, signed for descent or ascent,
//! plus parameter lifecycle helpers (copy, freeze, zero-grad).

use crate::error::{Error, Result};
use crate::numerics::{Accumulators, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

/// Hyperparameters of the ADADELTA rule. Per-tensor accumulators live in
/// the [`ParamSet`] they belong to, so copying parameters resets them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
    /// Global multiplier η applied to each ADADELTA update.
    pub lr: f64,
}

impl Default for Adadelta {
    fn default() -> Self {
        Adadelta { rho: 0.95, eps: 1e-6, lr: 1e-4 }
    }
}

/// The parameter groups one optimizer updates, and in which direction.
pub struct OptimizerBinding<'a> {
    pub sets: Vec<&'a mut ParamSet>,
    pub direction: Direction,
}

impl<'a> OptimizerBinding<'a> {
    pub fn descend(sets: Vec<&'a mut ParamSet>) -> Self {
        OptimizerBinding { sets, direction: Direction::Descend }
    }

    pub fn ascend(sets: Vec<&'a mut ParamSet>) -> Self {
        OptimizerBinding { sets, direction: Direction::Ascend }
    }
}

impl Adadelta {
    pub fn with_lr(lr: f64) -> Self {
        Adadelta { lr, ..Adadelta::default() }
    }

    /// One update of every trainable tensor in the binding:
    ///
    /// ```text
    /// E[g²]  ← ρ·E[g²] + (1−ρ)·g²
    /// Δx     = −√(E[Δx²]+ε) / √(E[g²]+ε) · g
    /// E[Δx²] ← ρ·E[Δx²] + (1−ρ)·Δx²
    /// θ      ← θ + η·Δx        (descend)
    /// θ      ← θ − η·Δx        (ascend)
    /// ```
    ///
    /// Frozen tensors are skipped. A trainable tensor without a gradient
    /// is treated as having a zero gradient; a binding with no gradients
    /// at all is a state error.
    pub fn step(&self, binding: &mut OptimizerBinding<'_>) -> Result<()> {
        let any_grad = binding
            .sets
            .iter()
            .any(|s| (0..s.len()).any(|i| s.get(i).requires_grad() && s.get(i).grad().is_some()));
        let any_trainable = binding.sets.iter().any(|s| !s.is_frozen());
        if any_trainable && !any_grad {
            return Err(Error::State("optimizer step without gradients; run backward first".into()));
        }
        let sign = match binding.direction {
            Direction::Descend => 1.0,
            Direction::Ascend => -1.0,
        };
        for set in binding.sets.iter_mut() {
            self.update_set(set, sign);
        }
        Ok(())
    }

    fn update_set(&self, set: &mut ParamSet, sign: f64) {
        let (tensors, state) = set.split_for_update();
        for (t, slot) in tensors.iter_mut().zip(state.iter_mut()) {
            if !t.requires_grad() {
                continue;
            }
            let n = t.len();
            let acc = slot.get_or_insert_with(|| Accumulators::zeros(n));
            let grad = t.grad().map(<[f64]>::to_vec);
            let data = t.data_mut();
            for j in 0..n {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                acc.sq_grad[j] = self.rho * acc.sq_grad[j] + (1.0 - self.rho) * g * g;
                let delta = -((acc.sq_update[j] + self.eps).sqrt() / (acc.sq_grad[j] + self.eps).sqrt()) * g;
                acc.sq_update[j] = self.rho * acc.sq_update[j] + (1.0 - self.rho) * delta * delta;
                data[j] += sign * self.lr * delta;
            }
        }
    }
}

/// Adds the gradient of `λ‖θ‖²`, i.e. `2λθ`, to every trainable tensor
/// that already holds a gradient.
pub fn add_l2_gradient(sets: &mut [&mut ParamSet], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for set in sets.iter_mut() {
        for t in set.tensors_mut() {
            if !t.requires_grad() || t.grad().is_none() {
                continue;
            }
            let penalty: Vec<f64> = t.data().iter().map(|v| 2.0 * lambda * v).collect();
            t.accumulate_grad(&penalty);
        }
    }
}

/// Value of `λ Σ‖θ‖²` over the given sets.
pub fn l2_penalty(sets: &[&ParamSet], lambda: f64) -> f64 {
    lambda * sets.iter().map(|s| s.squared_norm()).sum::<f64>()
}

/// Makes `dst` a bitwise copy of `src`, set for set. Optimizer state of
/// `dst` is reset; freeze flags of `dst` are kept.
pub fn copy_parameters(src: &[&ParamSet], dst: &mut [&mut ParamSet]) -> Result<()> {
    if src.len() != dst.len() {
        return Err(Error::Config(format!(
            "cannot copy {} parameter groups into {}",
            src.len(),
            dst.len()
        )));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        d.copy_from(s)?;
    }
    Ok(())
}

pub fn freeze(sets: &mut [&mut ParamSet]) {
    sets.iter_mut().for_each(|s| s.freeze());
}

pub fn zero_grads(sets: &mut [&mut ParamSet]) {
    sets.iter_mut().for_each(|s| s.zero_grads());
}
