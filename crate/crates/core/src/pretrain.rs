//! Denoiser pretraining on consistent multiview projections.
//!
//! Minimizes squared noise-prediction error over sampled (scene, t, noise)
//! triples whose clean targets are the per-view rotations of the scene base
//! point. Conditioning dropout zeroes the prompt and view embeddings for a
//! fraction of samples so the unconditional guidance branch gets trained;
//! with `dropout = 0` that branch never receives gradient and predictions
//! at guidance scale 0 behave like an untrained net.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{BoundDenoiser, DenoiserParams, ModelError};
use crate::objectives::ObjectiveError;
use crate::optimizer::{adam_step, AdamConfig, AdamState};
use crate::scene::{target_view, SceneSpec};
use crate::schedule::NoiseSchedule;
use crate::seeds;
use crate::tape::{DenseArray, Tape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Scenes per optimization step.
    pub batch: usize,
    /// Probability of zeroing the conditioning embeddings for a sample.
    pub dropout: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 3000, lr: 2e-3, batch: 4, dropout: 0.1 }
    }
}

/// Runs pretraining in place; returns the per-step batch losses.
pub fn pretrain(
    params: &mut DenoiserParams,
    schedule: &NoiseSchedule,
    scenes: &[SceneSpec],
    config: &PretrainConfig,
    seed: u64,
) -> Result<Vec<f64>, ObjectiveError> {
    assert!(config.steps >= 1, "pretraining needs at least one step");
    let mut adam = AdamState::default();
    let adam_config = AdamConfig { lr: config.lr, weight_decay: 0.0, ..AdamConfig::default() };
    let views: Vec<usize> = (0..scenes[0].angles.len()).collect();
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut rng = seeds::stream(seed, &[0x9e7, step as u64]);
        let mut grads = std::collections::BTreeMap::new();
        let mut batch_loss = 0.0;
        let sample_weight = 1.0 / config.batch as f64;
        for _ in 0..config.batch {
            let scene = &scenes[rng.gen_range(0..scenes.len())];
            let t = rng.gen_range(1..=schedule.steps);
            let dropped = rng.gen_range(0.0..1.0) < config.dropout;
            let abar = schedule.alpha_bar_at(t);
            let (signal, noise_scale) = (abar.sqrt(), (1.0 - abar).sqrt());
            let mut noisy = Vec::with_capacity(views.len());
            let mut eps_targets = Vec::with_capacity(views.len());
            for &v in &views {
                let clean = target_view(scene, v);
                let eps: Vec<f64> =
                    (0..clean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                noisy.push(
                    clean
                        .iter()
                        .zip(&eps)
                        .map(|(c, e)| signal * c + noise_scale * e)
                        .collect::<Vec<f64>>(),
                );
                eps_targets.push(eps);
            }

            let mut tape = Tape::new();
            let bound = BoundDenoiser::bind(&mut tape, params, scene.prompt, &views, true)?;
            let ctx = crate::model::context_for(&views, &noisy);
            let ctx_node = tape.leaf(DenseArray::vector(&ctx));
            let mut per_view = Vec::with_capacity(views.len());
            for (i, &v) in views.iter().enumerate() {
                let x_node = tape.leaf(DenseArray::vector(&noisy[i]));
                // dropped samples train the unconditional branch (omega = 0)
                let omega = if dropped { 0.0 } else { 1.0 };
                let eps_hat = bound.eps(&mut tape, x_node, v, t, ctx_node, omega)?;
                let target = tape.leaf(DenseArray::vector(&eps_targets[i]));
                per_view.push(tape.squared_error(eps_hat, target)?);
            }
            let mut total = per_view[0];
            for &node in &per_view[1..] {
                total = tape.add(total, node)?;
            }
            let loss = tape.scale(total, 1.0 / views.len() as f64);
            batch_loss += tape.value(loss).item() * sample_weight;
            let gmap = tape.backward(loss)?;
            let named = bound.named_grads(&gmap);
            for (name, grad) in named {
                match grads.get_mut(&name) {
                    None => {
                        let mut scaled = grad;
                        for g in scaled.data_mut() {
                            *g *= sample_weight;
                        }
                        grads.insert(name, scaled);
                    }
                    Some(acc) => {
                        for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                            *a += sample_weight * g;
                        }
                    }
                }
            }
        }
        adam_step(params, &grads, &mut adam, &adam_config);
        losses.push(batch_loss);
    }
    Ok(losses)
}

/// Convenience: the noise-prediction loss of a fixed probe batch, for
/// before/after comparisons.
pub fn probe_loss(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    scenes: &[SceneSpec],
    seed: u64,
) -> Result<f64, ModelError> {
    let views: Vec<usize> = (0..scenes[0].angles.len()).collect();
    let mut rng = seeds::stream(seed, &[0xbeef]);
    let mut total = 0.0;
    let samples = 32;
    for _ in 0..samples {
        let scene = &scenes[rng.gen_range(0..scenes.len())];
        let t = rng.gen_range(1..=schedule.steps);
        let abar = schedule.alpha_bar_at(t);
        let (signal, noise_scale) = (abar.sqrt(), (1.0 - abar).sqrt());
        let mut noisy = Vec::with_capacity(views.len());
        let mut eps_targets = Vec::with_capacity(views.len());
        for &v in &views {
            let clean = target_view(scene, v);
            let eps: Vec<f64> =
                (0..clean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            noisy.push(
                clean.iter().zip(&eps).map(|(c, e)| signal * c + noise_scale * e).collect::<Vec<f64>>(),
            );
            eps_targets.push(eps);
        }
        let eps_hat = crate::model::predict_noise(params, &noisy, t, scene.prompt, &views, 1.0)?;
        for (hat, target) in eps_hat.iter().zip(&eps_targets) {
            total += hat
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / views.len() as f64;
        }
    }
    Ok(total / samples as f64)
}
