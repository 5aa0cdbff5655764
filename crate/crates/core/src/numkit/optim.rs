//! Adam with decoupled weight decay and a cosine-annealed learning rate.

use std::f64::consts::PI;

use super::tensor::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// `0.5·lr0·(1 + cos(π·step/total))`; `step` is clamped to `total`.
pub fn cosine_lr(step: u64, total: u64, lr0: f64) -> f64 {
    assert!(total > 0, "cosine_lr with total = 0");
    let s = step.min(total) as f64;
    (0.5 * lr0 * (1.0 + (PI * s / total as f64).cos())).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub total_steps: u64,
    /// Global gradient-norm clip applied before each step; `None` disables.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
            total_steps: 1,
            clip_norm: Some(10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub params: Vec<ParamId>,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|&id| vec![0.0; store.tensor(id).len()]).collect();
        Self { config, params, first_moment: zeros.clone(), second_moment: zeros, step: 0 }
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.step, self.config.total_steps, self.config.lr)
    }
}

/// Scales gradients of `ids` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, ids: &[ParamId], max_norm: f64) -> f64 {
    let norm = ids
        .iter()
        .filter_map(|&id| store.tensor(id).grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for &id in ids {
            if let Some(g) = store.tensor_mut(id).grad_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

/// One Adam update of every parameter tracked by `state`, using the
/// scheduled learning rate for the current step. Returns that rate.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<f64> {
    for (k, &id) in state.params.iter().enumerate() {
        let tensor = store.tensor(id);
        if tensor.grad().is_none() {
            return Err(Error::contract(format!(
                "adam step without gradient for `{}`",
                store.entry(id).name
            )));
        }
        if tensor.len() != state.first_moment[k].len() || tensor.len() != state.second_moment[k].len() {
            return Err(Error::contract("adam state shape does not match parameter"));
        }
    }
    let cfg = state.config;
    if let Some(max) = cfg.clip_norm {
        clip_grad_norm(store, &state.params, max);
    }
    let lr = state.current_lr();
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, &id) in state.params.iter().enumerate() {
        let tensor = store.tensor_mut(id);
        let grad = tensor.grad().expect("checked above").to_vec();
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        for (i, p) in tensor.values_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            *p -= lr * (mh / (vh.sqrt() + cfg.eps) + cfg.weight_decay * *p);
        }
    }
    Ok(lr)
}
