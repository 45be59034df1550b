//! ZMV sampling: zigzag self-refinement passes with approximate inversion.
//!
//! A zigzag pass at timestep t is denoise (high guidance) -> approximate
//! inversion (low guidance) -> re-denoise (high guidance). The inversion is
//! part of the sampler, not the policy: only the final re-denoise transition
//! is recorded, so likelihood replay treats the trajectory as a standard
//! Gaussian chain.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{predict_noise, DenoiserParams, GuidanceConfig, ModelError};
use crate::sampling::{
    denoise_step, sample_impl, MultiviewTrajectory, NoiseSource, SamplingMode,
};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Error)]
pub enum ZigzagError {
    #[error("explicit zigzag step {step} outside [1, {steps}]")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("passes-per-step must be at least 1")]
    ZeroPasses,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which timesteps receive a zigzag pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZigzagMode {
    /// Only the very first step (t = T).
    FirstStep,
    /// Every step.
    FullStep,
    /// An explicit step set (may be empty).
    Explicit(BTreeSet<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZigzagSchedule {
    pub mode: ZigzagMode,
    /// Inversion/re-denoise repetitions per scheduled step.
    pub passes_per_step: usize,
}

impl ZigzagSchedule {
    pub fn first_step() -> Self {
        Self { mode: ZigzagMode::FirstStep, passes_per_step: 1 }
    }

    pub fn full_step() -> Self {
        Self { mode: ZigzagMode::FullStep, passes_per_step: 1 }
    }

    pub fn explicit(steps: impl IntoIterator<Item = usize>) -> Self {
        Self { mode: ZigzagMode::Explicit(steps.into_iter().collect()), passes_per_step: 1 }
    }

    /// Resolves the scheduled step set against a T-step sampler.
    pub fn active_steps(&self, steps: usize) -> Result<BTreeSet<usize>, ZigzagError> {
        if self.passes_per_step == 0 {
            return Err(ZigzagError::ZeroPasses);
        }
        match &self.mode {
            ZigzagMode::FirstStep => Ok(BTreeSet::from([steps])),
            ZigzagMode::FullStep => Ok((1..=steps).collect()),
            ZigzagMode::Explicit(set) => {
                if let Some(&bad) = set.iter().find(|&&s| s < 1 || s > steps) {
                    return Err(ZigzagError::StepOutOfRange { step: bad, steps });
                }
                Ok(set.clone())
            }
        }
    }
}

/// Maps a partially denoised latent (at t-1) back to level t: computes the
/// predicted clean sample under low guidance, then re-noises it. The noise
/// estimate at x_{t-1} stands in for the estimate at the inverted point.
pub fn approximate_inversion(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    x_prev: &[Vec<f64>],
    t: usize,
    prompt: usize,
    views: &[usize],
    omega_low: f64,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let eps = predict_noise(params, x_prev, t, prompt, views, omega_low)?;
    let abar_prev = schedule.alpha_bar_at(t - 1);
    let abar = schedule.alpha_bar_at(t);
    let (sq_prev, sq_prev_c) = (abar_prev.sqrt(), (1.0 - abar_prev).sqrt());
    let (sq, sq_c) = (abar.sqrt(), (1.0 - abar).sqrt());
    Ok(x_prev
        .iter()
        .zip(&eps)
        .map(|(x, e)| {
            x.iter()
                .zip(e)
                .map(|(xi, ei)| {
                    let clean = (xi - sq_prev_c * ei) / sq_prev;
                    sq * clean + sq_c * ei
                })
                .collect()
        })
        .collect())
}

/// Result of one zigzag transition at a timestep.
#[derive(Debug, Clone)]
pub struct ZigzagPassOutput {
    /// Final x_{t-1} per view (output of the last re-denoise).
    pub next: Vec<Vec<f64>>,
    /// Means of the last re-denoise, the transition that gets recorded.
    pub means: Vec<Vec<f64>>,
    pub stddev: f64,
    /// The inverted latent the recorded transition conditioned on.
    pub inverted: Vec<Vec<f64>>,
    /// Denoiser-prediction steps consumed (per view per guidance branch).
    pub predictions: usize,
}

/// Denoise at `omega_high`, invert at `omega_low`, re-denoise at
/// `omega_high`; with `passes` > 1 the inversion/re-denoise pair repeats.
#[allow(clippy::too_many_arguments)]
pub fn zigzag_pass(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    xs: &[Vec<f64>],
    t: usize,
    prompt: usize,
    views: &[usize],
    omega_high: f64,
    omega_low: f64,
    passes: usize,
    noise: &NoiseSource,
) -> Result<ZigzagPassOutput, ZigzagError> {
    if passes == 0 {
        return Err(ZigzagError::ZeroPasses);
    }
    let (mut current, _, _) =
        denoise_step(params, schedule, xs, t, prompt, views, omega_high, |i| {
            noise.step(views[i], t, 0)
        })?;
    let mut predictions = 1;
    let mut out = None;
    for pass in 1..=passes {
        let inverted =
            approximate_inversion(params, schedule, &current, t, prompt, views, omega_low)?;
        predictions += 1;
        let (next, means, stddev) =
            denoise_step(params, schedule, &inverted, t, prompt, views, omega_high, |i| {
                noise.step(views[i], t, pass as u64)
            })?;
        predictions += 1;
        current = next.clone();
        out = Some(ZigzagPassOutput { next, means, stddev, inverted, predictions });
    }
    let mut out = out.expect("passes >= 1");
    out.predictions = predictions;
    Ok(out)
}

/// ZMV-Sampling: standard multiview sampling with zigzag passes at the
/// scheduled steps. An empty explicit schedule reproduces standard sampling
/// draw-for-draw at equal seed.
pub fn zmv_sample(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    prompt: usize,
    views: &[usize],
    zigzag: &ZigzagSchedule,
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<MultiviewTrajectory, ZigzagError> {
    let active = zigzag.active_steps(schedule.steps)?;
    Ok(sample_impl(
        params,
        schedule,
        prompt,
        views,
        guidance.omega_high,
        guidance.omega_low,
        &active,
        zigzag.passes_per_step,
        seed,
        SamplingMode::Zigzag,
    )?)
}
