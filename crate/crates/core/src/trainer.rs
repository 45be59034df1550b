//! The training harness: batched pair sampling, reward normalization,
//! controller updates, advantage computation, inner-epoch optimization with
//! gradient clipping, checkpointing, resumption, and evaluation.
//!
//! One epoch: sample B trajectory pairs per batch (standard + ZMV for the
//! zigzag methods, two standards otherwise), score and normalize rewards,
//! update the constraint controller for the constrained methods, snapshot
//! the parameters, then run N inner epochs that recompute the stored
//! chains' log-likelihoods under the current parameters against the
//! snapshot and take one clipped optimizer step per pair batch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::checkpoint::{self, Checkpoint, CheckpointError};
use crate::config::{Method, TrainConfig};
use crate::controller::{
    batch_avg_joint_reward, epoch_update, ConstraintState, ControllerError,
};
use crate::metrics::{self, MetricsRow, MetricsError};
use crate::model::{DenoiserParams, GuidanceConfig, ModelError};
use crate::normalizer::RunningNormalizer;
use crate::objectives::{
    self, mvc_advantage, mvc_reward, ws_reward, LossResult, ObjectiveError, RewardRecord,
    ScoredTrajectory, TrajectoryPair,
};
use crate::optimizer::{adam_step, clip_global_norm, AdamState};
use crate::pretrain::{pretrain, PretrainConfig};
use crate::sampling::{sample_trajectories, MultiviewTrajectory, SamplingMode};
use crate::scene::{joint_view_reward, make_scene, single_view_reward, SceneError, SceneSpec};
use crate::schedule::{build_noise_schedule, NoiseSchedule, ScheduleError};
use crate::seeds;
use crate::zigzag::{zmv_sample, ZigzagError, ZigzagSchedule};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient in epoch {epoch}, pair {pair}")]
    NonFinite { epoch: usize, pair: usize },
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("checkpoint does not match config: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Zigzag(#[from] ZigzagError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

// seed-derivation domains
const DOM_SCENE: u64 = 1;
const DOM_PROMPTS: u64 = 2;
const DOM_TRAJ: u64 = 3;
const DOM_EVAL: u64 = 4;
const DOM_INIT: u64 = 5;

/// Both reward channels' running statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardNormalizer {
    pub single: RunningNormalizer,
    pub joint: RunningNormalizer,
}

impl RewardNormalizer {
    pub fn new(config: &TrainConfig) -> Self {
        let make = || RunningNormalizer::new(config.norm_decay, config.norm_eps, config.norm_strict_batch);
        Self { single: make(), joint: make() }
    }
}

/// Raw rewards of a trajectory's final sample under its scene.
pub fn score_trajectory(traj: &MultiviewTrajectory, scene: &SceneSpec) -> RewardRecord {
    let x0 = traj.x0();
    let single: Vec<f64> =
        (0..traj.views.len()).map(|i| single_view_reward(&x0[i], scene, traj.views[i])).collect();
    let joint = joint_view_reward(x0, scene);
    RewardRecord::raw(single, joint)
}

/// Updates the running statistics from the raw batch (single channel pools
/// every view of both members; joint channel pools both members), then
/// writes the normalized values into each record.
pub fn normalize_rewards(pairs: &mut [TrajectoryPair], normalizer: &mut RewardNormalizer) {
    let mut singles = Vec::new();
    let mut joints = Vec::new();
    for pair in pairs.iter() {
        for member in [&pair.first, &pair.second] {
            singles.extend_from_slice(&member.rewards.single_raw);
            joints.push(member.rewards.joint_raw);
        }
    }
    normalizer.single.update(&singles);
    normalizer.joint.update(&joints);
    for pair in pairs.iter_mut() {
        for member in [&mut pair.first, &mut pair.second] {
            member.rewards.single_norm = Some(
                member.rewards.single_raw.iter().map(|r| normalizer.single.normalize(*r)).collect(),
            );
            member.rewards.joint_norm = Some(normalizer.joint.normalize(member.rewards.joint_raw));
        }
    }
}

/// Mutable training state carried across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub params: DenoiserParams,
    pub schedule: NoiseSchedule,
    pub adam: AdamState,
    pub normalizer: RewardNormalizer,
    pub constraint: ConstraintState,
    /// Last completed epoch (0 before training).
    pub epoch: usize,
}

impl TrainerState {
    pub fn fresh(params: DenoiserParams, schedule: NoiseSchedule, config: &TrainConfig) -> Self {
        Self {
            params,
            schedule,
            adam: AdamState::default(),
            normalizer: RewardNormalizer::new(config),
            constraint: ConstraintState::new(&config.controller),
            epoch: 0,
        }
    }
}

fn scene_for(config: &TrainConfig, prompt: usize) -> Result<SceneSpec, SceneError> {
    make_scene(
        prompt,
        config.views,
        config.latent_dim,
        config.gamma,
        seeds::derive(config.seed, &[DOM_SCENE]),
    )
}

fn check_finite(loss: f64, grads: &BTreeMap<String, crate::tape::DenseArray>) -> bool {
    loss.is_finite() && grads.values().all(|g| g.data().iter().all(|v| v.is_finite()))
}

/// Samples the trajectory pairs for one epoch.
fn collect_pairs(
    state: &TrainerState,
    config: &TrainConfig,
    epoch: usize,
) -> Result<Vec<TrajectoryPair>, TrainError> {
    use rand::Rng;
    let views: Vec<usize> = (0..config.views).collect();
    let mut pairs = Vec::with_capacity(config.batches_per_epoch * config.batch);
    for batch_idx in 0..config.batches_per_epoch {
        let mut prompt_rng =
            seeds::stream(config.seed, &[DOM_PROMPTS, epoch as u64, batch_idx as u64]);
        for j in 0..config.batch {
            let prompt = prompt_rng.gen_range(0..config.prompt_count);
            let scene = scene_for(config, prompt)?;
            let seed_of = |member: u64| {
                seeds::derive(
                    config.seed,
                    &[DOM_TRAJ, epoch as u64, batch_idx as u64, j as u64, member],
                )
            };
            let first = sample_trajectories(
                &state.params,
                &state.schedule,
                prompt,
                &views,
                config.guidance.omega_high,
                seed_of(0),
            )?;
            let second = if config.method.uses_zigzag_pair() {
                zmv_sample(
                    &state.params,
                    &state.schedule,
                    prompt,
                    &views,
                    &config.zigzag,
                    &config.guidance,
                    seed_of(1),
                )?
            } else {
                sample_trajectories(
                    &state.params,
                    &state.schedule,
                    prompt,
                    &views,
                    config.guidance.omega_high,
                    seed_of(1),
                )?
            };
            let first_rewards = score_trajectory(&first, &scene);
            let second_rewards = score_trajectory(&second, &scene);
            pairs.push(TrajectoryPair {
                first: ScoredTrajectory { trajectory: first, rewards: first_rewards },
                second: ScoredTrajectory { trajectory: second, rewards: second_rewards },
            });
        }
    }
    Ok(pairs)
}

/// Loss and gradients of one pair chunk under the configured method.
/// `Ok(None)` means the chunk contributed nothing (all pairs skipped).
fn chunk_loss(
    chunk: &[TrajectoryPair],
    params: &DenoiserParams,
    prev: &DenoiserParams,
    schedule: &NoiseSchedule,
    lambda: f64,
    config: &TrainConfig,
) -> Result<Option<LossResult>, TrainError> {
    let objective = config.objective_with_floor();
    let result = match config.method {
        Method::MvPg => {
            let batch: Vec<(&MultiviewTrajectory, f64)> = chunk
                .iter()
                .flat_map(|p| {
                    [
                        (&p.first.trajectory, p.first.rewards.joint_norm.unwrap_or(0.0)),
                        (&p.second.trajectory, p.second.rewards.joint_norm.unwrap_or(0.0)),
                    ]
                })
                .collect();
            Some(objectives::mv_pg_loss(&batch, params, schedule)?)
        }
        Method::MvcZigpg => {
            let weights: Vec<Vec<f64>> = chunk
                .iter()
                .flat_map(|p| {
                    [&p.first, &p.second].map(|member| {
                        let joint = member.rewards.joint_norm.unwrap_or(0.0);
                        member
                            .rewards
                            .single_norm
                            .as_ref()
                            .map(|s| s.iter().map(|r| mvc_reward(*r, joint, lambda)).collect())
                            .unwrap_or_default()
                    })
                })
                .collect();
            let batch: Vec<(&MultiviewTrajectory, &[f64])> = chunk
                .iter()
                .flat_map(|p| [&p.first.trajectory, &p.second.trajectory])
                .zip(weights.iter().map(|w| w.as_slice()))
                .collect();
            Some(objectives::weighted_pg_loss(&batch, params, schedule)?)
        }
        Method::MvDpo => {
            let ranked: Vec<&TrajectoryPair> = chunk
                .iter()
                .filter(|p| p.first.rewards.joint_raw != p.second.rewards.joint_raw)
                .collect();
            if ranked.is_empty() {
                None
            } else {
                Some(objectives::mv_dpo_loss(&ranked, params, prev, schedule, &objective)?)
            }
        }
        Method::MvRdl => {
            let refs: Vec<&TrajectoryPair> = chunk.iter().collect();
            Some(objectives::mv_rdl_loss(&refs, params, prev, schedule, &objective)?)
        }
        Method::MvZigal => {
            let refs: Vec<&TrajectoryPair> = chunk.iter().collect();
            Some(objectives::mv_zigal_loss(&refs, params, prev, schedule, &objective)?)
        }
        Method::Zigal | Method::WsZigal | Method::MvcZigal => {
            let advantages: Vec<Vec<f64>> = chunk
                .iter()
                .map(|pair| per_view_advantages(pair, lambda, config))
                .collect::<Result<_, _>>()?;
            let with_adv: Vec<(&TrajectoryPair, &[f64])> =
                chunk.iter().zip(advantages.iter().map(|a| a.as_slice())).collect();
            Some(objectives::per_view_residual_loss(&with_adv, params, prev, schedule, &objective)?)
        }
    };
    Ok(result)
}

/// Per-view advantages for the advantage-learning variants: single-reward
/// differences (single-view only), weighted-sum differences, or the
/// constrained blend at the current multiplier.
fn per_view_advantages(
    pair: &TrajectoryPair,
    lambda: f64,
    config: &TrainConfig,
) -> Result<Vec<f64>, ObjectiveError> {
    let views = pair.views();
    let need = |record: &RewardRecord, v: usize| -> Result<(f64, f64), ObjectiveError> {
        let single = record
            .single_norm
            .as_ref()
            .and_then(|s| s.get(v).copied())
            .ok_or(ObjectiveError::MissingNormalizedRewards)?;
        let joint = record.joint_norm.ok_or(ObjectiveError::MissingNormalizedRewards)?;
        Ok((single, joint))
    };
    (0..views)
        .map(|v| match config.method {
            Method::Zigal => {
                let (sz, _) = need(&pair.second.rewards, v)?;
                let (ss, _) = need(&pair.first.rewards, v)?;
                Ok(sz - ss)
            }
            Method::WsZigal => {
                let (sz, jz) = need(&pair.second.rewards, v)?;
                let (ss, js) = need(&pair.first.rewards, v)?;
                Ok(ws_reward(sz, jz, config.objective.w_mv)
                    - ws_reward(ss, js, config.objective.w_mv))
            }
            _ => mvc_advantage(pair, v, lambda),
        })
        .collect()
}

fn find_offending_pair(
    pairs: &[TrajectoryPair],
    params: &DenoiserParams,
    prev: &DenoiserParams,
    schedule: &NoiseSchedule,
    lambda: f64,
    config: &TrainConfig,
) -> usize {
    for (i, pair) in pairs.iter().enumerate() {
        match chunk_loss(std::slice::from_ref(pair), params, prev, schedule, lambda, config) {
            Ok(Some(result)) if check_finite(result.value, &result.grads) => continue,
            Ok(None) => continue,
            _ => return i,
        }
    }
    0
}

/// Runs one training epoch in place and returns its metrics row.
pub fn run_epoch(
    state: &mut TrainerState,
    config: &TrainConfig,
    epoch: usize,
) -> Result<MetricsRow, TrainError> {
    let start = Instant::now();
    let mut pairs = collect_pairs(state, config, epoch)?;
    normalize_rewards(&mut pairs, &mut state.normalizer);

    let controller = if config.method.uses_controller() {
        let r_bar = batch_avg_joint_reward(&pairs)?;
        Some(epoch_update(&mut state.constraint, r_bar, &config.controller))
    } else {
        None
    };
    let lambda = controller.map(|c| c.lambda).unwrap_or(0.0);

    let prev = state.params.clone();
    let mut loss_sum = 0.0;
    let mut loss_steps = 0usize;
    let mut grad_norm_max = 0.0f64;
    for _inner in 0..config.inner_epochs {
        for (chunk_idx, chunk) in pairs.chunks(config.batch).enumerate() {
            let Some(result) =
                chunk_loss(chunk, &state.params, &prev, &state.schedule, lambda, config)?
            else {
                continue;
            };
            if !check_finite(result.value, &result.grads) {
                let offset = chunk_idx * config.batch;
                let local = find_offending_pair(
                    chunk,
                    &state.params,
                    &prev,
                    &state.schedule,
                    lambda,
                    config,
                );
                return Err(TrainError::NonFinite { epoch, pair: offset + local });
            }
            let mut grads = result.grads;
            let norm = clip_global_norm(&mut grads, config.max_grad_norm);
            grad_norm_max = grad_norm_max.max(norm);
            adam_step(&mut state.params, &grads, &mut state.adam, &config.optim);
            loss_sum += result.value;
            loss_steps += 1;
        }
    }

    let n_pairs = pairs.len() as f64;
    let views = config.views as f64;
    let mut single_raw = 0.0;
    let mut joint_raw = 0.0;
    let mut single_norm = 0.0;
    let mut joint_norm = 0.0;
    let mut gap = 0.0;
    for pair in &pairs {
        for member in [&pair.first, &pair.second] {
            single_raw += member.rewards.single_raw.iter().sum::<f64>() / views;
            joint_raw += member.rewards.joint_raw;
            single_norm +=
                member.rewards.single_norm.as_ref().map(|s| s.iter().sum::<f64>()).unwrap_or(0.0)
                    / views;
            joint_norm += member.rewards.joint_norm.unwrap_or(0.0);
        }
        gap += pair.second.rewards.joint_raw - pair.first.rewards.joint_raw;
    }
    state.epoch = epoch;
    Ok(MetricsRow {
        epoch,
        method: config.method.name().to_string(),
        mean_r_single_raw: single_raw / (2.0 * n_pairs),
        mean_r_mv_raw: joint_raw / (2.0 * n_pairs),
        mean_r_single_norm: single_norm / (2.0 * n_pairs),
        mean_r_mv_norm: joint_norm / (2.0 * n_pairs),
        lambda: controller.map(|c| c.lambda),
        tau: controller.map(|c| c.tau),
        violated: controller.map(|c| c.violated),
        loss: if loss_steps > 0 { loss_sum / loss_steps as f64 } else { 0.0 },
        grad_norm: grad_norm_max,
        zigzag_gap: gap / n_pairs,
        wall_ms: if config.deterministic_timing {
            0
        } else {
            start.elapsed().as_millis() as u64
        },
        config_hash: config.hash(),
    })
}

// -- full-state checkpointing ------------------------------------------------

fn pack_state(state: &TrainerState) -> Checkpoint {
    let mut ckpt = checkpoint::pack_model(&state.params, &state.schedule);
    ckpt.meta.insert("epoch".into(), state.epoch as u64);
    ckpt.meta.insert("adam_step".into(), state.adam.step);
    ckpt.meta.insert("norm_single_init".into(), state.normalizer.single.initialized as u64);
    ckpt.meta.insert("norm_joint_init".into(), state.normalizer.joint.initialized as u64);
    ckpt.meta.insert("constraint_init".into(), state.constraint.initialized as u64);
    for (name, m) in &state.adam.m {
        ckpt.arrays.insert(format!("adam.m.{name}"), crate::tape::DenseArray::vector(m));
    }
    for (name, v) in &state.adam.v {
        ckpt.arrays.insert(format!("adam.v.{name}"), crate::tape::DenseArray::vector(v));
    }
    ckpt.insert_scalar("state.lambda", state.constraint.lambda);
    ckpt.insert_scalar("state.tau", state.constraint.tau);
    ckpt.insert_scalar("state.norm_single_mean", state.normalizer.single.mean);
    ckpt.insert_scalar("state.norm_single_var", state.normalizer.single.var);
    ckpt.insert_scalar("state.norm_joint_mean", state.normalizer.joint.mean);
    ckpt.insert_scalar("state.norm_joint_var", state.normalizer.joint.var);
    ckpt
}

fn unpack_state(ckpt: &Checkpoint, config: &TrainConfig) -> Result<TrainerState, TrainError> {
    let (params, schedule) = checkpoint::unpack_model(ckpt)?;
    let mut state = TrainerState::fresh(params, schedule, config);
    state.epoch = ckpt.meta_usize("epoch").unwrap_or(0);
    state.adam.step = *ckpt.meta.get("adam_step").unwrap_or(&0);
    for (name, array) in &ckpt.arrays {
        if let Some(param) = name.strip_prefix("adam.m.") {
            state.adam.m.insert(param.to_string(), array.data().to_vec());
        } else if let Some(param) = name.strip_prefix("adam.v.") {
            state.adam.v.insert(param.to_string(), array.data().to_vec());
        }
    }
    if let Ok(v) = ckpt.scalar("state.lambda") {
        state.constraint.lambda = v;
    }
    if let Ok(v) = ckpt.scalar("state.tau") {
        state.constraint.tau = v;
    }
    state.constraint.initialized = *ckpt.meta.get("constraint_init").unwrap_or(&0) != 0;
    state.normalizer.single.initialized = *ckpt.meta.get("norm_single_init").unwrap_or(&0) != 0;
    state.normalizer.joint.initialized = *ckpt.meta.get("norm_joint_init").unwrap_or(&0) != 0;
    if let Ok(v) = ckpt.scalar("state.norm_single_mean") {
        state.normalizer.single.mean = v;
    }
    if let Ok(v) = ckpt.scalar("state.norm_single_var") {
        state.normalizer.single.var = v;
    }
    if let Ok(v) = ckpt.scalar("state.norm_joint_mean") {
        state.normalizer.joint.mean = v;
    }
    if let Ok(v) = ckpt.scalar("state.norm_joint_var") {
        state.normalizer.joint.var = v;
    }
    Ok(state)
}

fn check_compatible(state: &TrainerState, config: &TrainConfig) -> Result<(), TrainError> {
    if state.params.time_steps != config.steps {
        return Err(TrainError::Incompatible(format!(
            "checkpoint has T = {}, config wants {}",
            state.params.time_steps, config.steps
        )));
    }
    if state.params.latent_dim != config.latent_dim {
        return Err(TrainError::Incompatible(format!(
            "checkpoint has d = {}, config wants {}",
            state.params.latent_dim, config.latent_dim
        )));
    }
    if state.params.prompt_count() < config.prompt_count
        || state.params.view_count() < config.views
    {
        return Err(TrainError::Incompatible(
            "checkpoint embeds fewer prompts or views than the config uses".into(),
        ));
    }
    Ok(())
}

/// Where a finetuning run starts from.
pub enum Start {
    /// In-memory parameters (fresh trainer state).
    Params(Box<DenoiserParams>),
    /// A pretrained model checkpoint (fresh trainer state).
    PretrainedCheckpoint(PathBuf),
    /// A full training checkpoint; continues after its stored epoch.
    Resume(PathBuf),
}

/// Everything a finetuning run leaves behind.
#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub checkpoint_paths: Vec<PathBuf>,
    pub state: TrainerState,
}

fn load_checkpoint_file(path: &Path) -> Result<Checkpoint, TrainError> {
    if !path.exists() {
        return Err(TrainError::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(checkpoint::load(path)?)
}

/// Runs K epochs from the given start, checkpointing every
/// `checkpoint_interval` epochs, and writes the metrics table.
pub fn finetune(config: &TrainConfig, start: Start, out_dir: &Path) -> Result<RunOutput, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let mut state = match start {
        Start::Params(params) => {
            TrainerState::fresh(*params, build_noise_schedule(config.steps)?, config)
        }
        Start::PretrainedCheckpoint(path) => {
            let ckpt = load_checkpoint_file(&path)?;
            let (params, schedule) = checkpoint::unpack_model(&ckpt)?;
            TrainerState::fresh(params, schedule, config)
        }
        Start::Resume(path) => {
            let ckpt = load_checkpoint_file(&path)?;
            unpack_state(&ckpt, config)?
        }
    };
    check_compatible(&state, config)?;

    // scene dump for reproducibility
    let scene_lines: Vec<String> = (0..config.prompt_count)
        .map(|p| scene_for(config, p).map(|s| crate::scene::scene_to_text(&s)))
        .collect::<Result<_, _>>()?;
    std::fs::write(out_dir.join("scenes.txt"), scene_lines.join("\n") + "\n")?;

    let mut rows = Vec::new();
    let mut checkpoint_paths = Vec::new();
    let first_epoch = state.epoch + 1;
    for epoch in first_epoch..=config.epochs {
        let row = run_epoch(&mut state, config, epoch)?;
        rows.push(row);
        if epoch.is_multiple_of(config.checkpoint_interval) {
            let path = out_dir.join(format!("checkpoint_epoch{epoch:04}.ckpt"));
            checkpoint::save(&path, &pack_state(&state))?;
            checkpoint_paths.push(path);
        }
    }
    let final_checkpoint = out_dir.join("checkpoint_final.ckpt");
    checkpoint::save(&final_checkpoint, &pack_state(&state))?;
    let metrics_path = out_dir.join("metrics.csv");
    metrics::write_csv(&metrics_path, &rows)?;
    Ok(RunOutput { rows, metrics_path, final_checkpoint, checkpoint_paths, state })
}

/// Pretrains a fresh model over the config's prompt universe and returns it
/// with its schedule.
pub fn pretrain_from_config(
    config: &TrainConfig,
) -> Result<(DenoiserParams, NoiseSchedule), TrainError> {
    let schedule = build_noise_schedule(config.steps)?;
    let mut params = DenoiserParams::init(
        config.latent_dim,
        config.steps,
        config.prompt_count,
        config.views,
        seeds::derive(config.seed, &[DOM_INIT]),
    );
    let scenes: Vec<SceneSpec> =
        (0..config.prompt_count).map(|p| scene_for(config, p)).collect::<Result<_, _>>()?;
    let pre_config = PretrainConfig {
        steps: config.pretrain_steps,
        lr: config.pretrain_lr,
        batch: config.pretrain_batch,
        dropout: config.pretrain_dropout,
    };
    pretrain(&mut params, &schedule, &scenes, &pre_config, config.seed)?;
    Ok((params, schedule))
}

// -- evaluation ---------------------------------------------------------------

/// What to evaluate and how.
#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub prompt_ids: Vec<usize>,
    pub views: usize,
    pub latent_dim: usize,
    pub gamma: f64,
    pub scene_seed: u64,
    pub eval_seed: u64,
    pub guidance: GuidanceConfig,
    pub zigzag: ZigzagSchedule,
    pub modes: Vec<SamplingMode>,
}

impl EvalSpec {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            prompt_ids: (0..config.eval_prompts.min(config.prompt_count)).collect(),
            views: config.views,
            latent_dim: config.latent_dim,
            gamma: config.gamma,
            scene_seed: seeds::derive(config.seed, &[DOM_SCENE]),
            eval_seed: seeds::derive(config.seed, &[DOM_EVAL]),
            guidance: config.guidance,
            zigzag: config.zigzag.clone(),
            modes: vec![SamplingMode::Standard, SamplingMode::Zigzag],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: SamplingMode,
    pub mean_single: f64,
    pub mean_joint: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub prompts: usize,
    pub views: usize,
    pub modes: Vec<ModeReport>,
    /// mean joint reward of zigzag minus standard, when both were run.
    pub zigzag_gap: Option<f64>,
}

impl EvalReport {
    /// Deterministic text rendering (shortest round-trip floats).
    pub fn render_text(&self) -> String {
        let mut out = format!("format_version=1\nprompts={} views={}\n", self.prompts, self.views);
        for mode in &self.modes {
            out.push_str(&format!(
                "mode={} mean_r_single={} mean_r_mv={}\n",
                mode.mode.tag(),
                metrics::format_f64(mode.mean_single),
                metrics::format_f64(mode.mean_joint),
            ));
        }
        if let Some(gap) = self.zigzag_gap {
            out.push_str(&format!("zigzag_gap={}\n", metrics::format_f64(gap)));
        }
        out
    }
}

/// Fixed-seed generation per prompt per mode; trajectory seeds are shared
/// across modes so the zigzag gap is a paired comparison.
pub fn evaluate(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    spec: &EvalSpec,
) -> Result<EvalReport, TrainError> {
    let views: Vec<usize> = (0..spec.views).collect();
    let mut reports = Vec::new();
    for mode in &spec.modes {
        let mut single_sum = 0.0;
        let mut joint_sum = 0.0;
        for &prompt in &spec.prompt_ids {
            let scene = make_scene(prompt, spec.views, spec.latent_dim, spec.gamma, spec.scene_seed)?;
            let seed = seeds::derive(spec.eval_seed, &[prompt as u64]);
            let traj = match mode {
                SamplingMode::Standard => sample_trajectories(
                    params,
                    schedule,
                    prompt,
                    &views,
                    spec.guidance.omega_high,
                    seed,
                )?,
                SamplingMode::Zigzag => zmv_sample(
                    params,
                    schedule,
                    prompt,
                    &views,
                    &spec.zigzag,
                    &spec.guidance,
                    seed,
                )?,
            };
            let rewards = score_trajectory(&traj, &scene);
            single_sum += rewards.single_raw.iter().sum::<f64>() / spec.views as f64;
            joint_sum += rewards.joint_raw;
        }
        let n = spec.prompt_ids.len() as f64;
        reports.push(ModeReport {
            mode: *mode,
            mean_single: single_sum / n,
            mean_joint: joint_sum / n,
        });
    }
    let standard = reports.iter().find(|r| r.mode == SamplingMode::Standard);
    let zigzag = reports.iter().find(|r| r.mode == SamplingMode::Zigzag);
    let zigzag_gap = match (standard, zigzag) {
        (Some(s), Some(z)) => Some(z.mean_joint - s.mean_joint),
        _ => None,
    };
    Ok(EvalReport {
        prompts: spec.prompt_ids.len(),
        views: spec.views,
        modes: reports,
        zigzag_gap,
    })
}
