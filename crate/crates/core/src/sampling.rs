//! Ancestral multiview sampling and trajectory records.
//!
//! A trajectory stores, per sampling step, the exact transition that was
//! drawn: the per-view input latents, output latents, the means actually
//! used, and the step stddev. Replaying `step_log_prob` on a stored record
//! reproduces the recorded transition density; zigzag steps store the
//! re-denoise transition (its input is the inverted latent), so the records
//! always form valid Gaussian transitions.
//!
//! Noise is drawn from per-(view id, timestep) derived streams, so sampling
//! is deterministic under a fixed seed and equivariant under view
//! permutations.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{ancestral_mean, predict_noise, DenoiserParams, ModelError};
use crate::schedule::NoiseSchedule;
use crate::seeds;
use crate::tape::gaussian_log_density;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Standard,
    Zigzag,
}

impl SamplingMode {
    pub fn tag(self) -> &'static str {
        match self {
            SamplingMode::Standard => "standard",
            SamplingMode::Zigzag => "zigzag",
        }
    }
}

/// One recorded Gaussian transition at timestep `t` (all views jointly).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Per-view latents the transition conditioned on. At zigzag steps this
    /// is the inverted latent fed to the final re-denoise.
    pub from: Vec<Vec<f64>>,
    /// Per-view sampled outputs x_{t-1}.
    pub to: Vec<Vec<f64>>,
    /// Per-view means actually used.
    pub mean: Vec<Vec<f64>>,
    pub stddev: f64,
    /// Guidance scale the transition was sampled at.
    pub omega: f64,
}

/// Per-view latent chains with per-step sampling metadata for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewTrajectory {
    pub prompt: usize,
    pub views: Vec<usize>,
    /// Visited chain: index 0 holds x_T, index T holds x_0, per view inside.
    pub latents: Vec<Vec<Vec<f64>>>,
    /// One record per timestep, ordered t = T down to 1.
    pub steps: Vec<StepRecord>,
    pub mode: SamplingMode,
    pub seed: u64,
    /// Denoiser-prediction steps per view per guidance branch.
    pub prediction_steps: usize,
}

impl MultiviewTrajectory {
    pub fn x0(&self) -> &[Vec<f64>] {
        self.latents.last().expect("chain nonempty")
    }

    pub fn step_at(&self, t: usize) -> &StepRecord {
        let total = self.steps.len();
        &self.steps[total - t]
    }
}

/// Per-trajectory noise source; streams are keyed by (view id, timestep,
/// pass) so draws are independent of evaluation order.
pub struct NoiseSource {
    seed: u64,
    dim: usize,
}

const TAG_INIT: u64 = 0x11;
const TAG_STEP: u64 = 0x22;

impl NoiseSource {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim }
    }

    /// Standard-normal draw for a view's chain start x_T.
    pub fn initial(&self, view: usize) -> Vec<f64> {
        let mut rng = seeds::stream(self.seed, &[TAG_INIT, view as u64]);
        (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Standard-normal draw for a transition at timestep `t`; `pass`
    /// distinguishes the draws inside a zigzag pass.
    pub fn step(&self, view: usize, t: usize, pass: u64) -> Vec<f64> {
        let mut rng = seeds::stream(self.seed, &[TAG_STEP, view as u64, t as u64, pass]);
        (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// Per-view latents, per-view means, and the step stddev of one transition.
pub type StepOutput = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64);

/// One ancestral transition across views; returns (next latents, means, stddev).
#[allow(clippy::too_many_arguments)]
pub fn denoise_step(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    xs: &[Vec<f64>],
    t: usize,
    prompt: usize,
    views: &[usize],
    omega: f64,
    noise: impl Fn(usize) -> Vec<f64>,
) -> Result<StepOutput, ModelError> {
    let eps = predict_noise(params, xs, t, prompt, views, omega)?;
    let sigma = schedule.sigma_at(t);
    let mut means = Vec::with_capacity(xs.len());
    let mut next = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let mean = ancestral_mean(schedule, x, &eps[i], t);
        let sample = if sigma == 0.0 {
            mean.clone()
        } else {
            let z = noise(i);
            mean.iter().zip(&z).map(|(m, zi)| m + sigma * zi).collect()
        };
        means.push(mean);
        next.push(sample);
    }
    Ok((next, means, sigma))
}

/// Trajectory sampler shared by standard and zigzag sampling. At scheduled
/// steps the transition is denoise -> approximate inversion -> re-denoise
/// (repeated `passes` times); only the final re-denoise is recorded.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_impl(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    prompt: usize,
    views: &[usize],
    omega_high: f64,
    omega_low: f64,
    zigzag_steps: &BTreeSet<usize>,
    passes: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<MultiviewTrajectory, ModelError> {
    let noise = NoiseSource::new(seed, params.latent_dim);
    let steps = schedule.steps;
    let mut xs: Vec<Vec<f64>> = views.iter().map(|&v| noise.initial(v)).collect();
    let mut latents = vec![xs.clone()];
    let mut records = Vec::with_capacity(steps);
    let mut predictions = 0usize;

    for t in (1..=steps).rev() {
        if zigzag_steps.contains(&t) {
            let out = crate::zigzag::zigzag_pass(
                params, schedule, &xs, t, prompt, views, omega_high, omega_low, passes, &noise,
            )
            .map_err(|e| match e {
                crate::zigzag::ZigzagError::Model(m) => m,
                // the caller validates the schedule before sampling
                other => unreachable!("{other}"),
            })?;
            predictions += out.predictions;
            records.push(StepRecord {
                t,
                from: out.inverted,
                to: out.next.clone(),
                mean: out.means,
                stddev: out.stddev,
                omega: omega_high,
            });
            xs = out.next;
        } else {
            let (next, means, sigma) = denoise_step(
                params,
                schedule,
                &xs,
                t,
                prompt,
                views,
                omega_high,
                |i| noise.step(views[i], t, 0),
            )?;
            predictions += 1;
            records.push(StepRecord {
                t,
                from: xs.clone(),
                to: next.clone(),
                mean: means,
                stddev: sigma,
                omega: omega_high,
            });
            xs = next;
        }
        latents.push(xs.clone());
    }

    Ok(MultiviewTrajectory {
        prompt,
        views: views.to_vec(),
        latents,
        steps: records,
        mode,
        seed,
        prediction_steps: predictions,
    })
}

/// Standard multiview ancestral sampling.
pub fn sample_trajectories(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    prompt: usize,
    views: &[usize],
    omega: f64,
    seed: u64,
) -> Result<MultiviewTrajectory, ModelError> {
    sample_impl(
        params,
        schedule,
        prompt,
        views,
        omega,
        omega,
        &BTreeSet::new(),
        1,
        seed,
        SamplingMode::Standard,
    )
}

/// Per-view log p(x_{t-1} | x_t) with the mean recomputed under `params`.
/// The deterministic t = 1 step has no density and is rejected.
#[allow(clippy::too_many_arguments)]
pub fn step_log_prob(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    x_prev: &[Vec<f64>],
    x_t: &[Vec<f64>],
    t: usize,
    prompt: usize,
    views: &[usize],
    omega: f64,
) -> Result<Vec<f64>, ModelError> {
    if t == 1 {
        return Err(ModelError::ExcludedStep);
    }
    let eps = predict_noise(params, x_t, t, prompt, views, omega)?;
    let sigma = schedule.sigma_at(t);
    let mut out = Vec::with_capacity(views.len());
    for (i, x) in x_t.iter().enumerate() {
        let mean = ancestral_mean(schedule, x, &eps[i], t);
        out.push(gaussian_log_density(&x_prev[i], &mean, sigma)?);
    }
    Ok(out)
}

/// Sum of per-step per-view log-densities over the stochastic steps
/// (t in [2, T]) of a stored trajectory, recomputed under `params`.
pub fn trajectory_log_prob_sum(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    traj: &MultiviewTrajectory,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for record in &traj.steps {
        if record.t == 1 {
            continue;
        }
        let lps = step_log_prob(
            params,
            schedule,
            &record.to,
            &record.from,
            record.t,
            traj.prompt,
            &traj.views,
            record.omega,
        )?;
        total += lps.iter().sum::<f64>();
    }
    Ok(total)
}

/// Log-density of each stored transition implied by its recorded (mean, stddev).
pub fn recorded_log_density(record: &StepRecord, view: usize) -> Result<f64, ModelError> {
    if record.stddev == 0.0 {
        return Err(ModelError::ExcludedStep);
    }
    Ok(gaussian_log_density(&record.to[view], &record.mean[view], record.stddev)?)
}
