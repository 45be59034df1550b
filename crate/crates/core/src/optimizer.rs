//! Adaptive-moment optimizer with decoupled weight decay and global
//! gradient-norm clipping.

use std::collections::BTreeMap;

use crate::model::DenoiserParams;
use crate::tape::DenseArray;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Optimizer state: per-array first and second moments plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the post-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, DenseArray>, max_norm: f64) -> f64 {
    let mut total = 0.0;
    for g in grads.values() {
        for v in g.data() {
            total += v * v;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        max_norm
    } else {
        norm
    }
}

/// One optimizer step over the named gradients. Arrays absent from `grads`
/// are left untouched (their moments do not advance).
pub fn adam_step(
    params: &mut DenoiserParams,
    grads: &BTreeMap<String, DenseArray>,
    state: &mut AdamState,
    config: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (name, grad) in grads {
        let Some(array) = params.named_array_mut(name) else { continue };
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        let data = array.data_mut();
        for i in 0..data.len() {
            let g = grad.data()[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= config.lr * (m_hat / (v_hat.sqrt() + config.eps))
                + config.lr * config.weight_decay * data[i];
        }
    }
}
