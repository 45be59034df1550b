//! Policy-optimization objectives: reward/advantage transforms and the
//! policy-gradient, preference, and reward-difference losses.
//!
//! All likelihood terms are per-step Gaussian log-densities of stored
//! transitions, recomputed under the current parameters (differentiated)
//! and a frozen snapshot (constants on the same tape). Per-step log-ratios
//! are clamped symmetrically to the bound implied by the probability floor.
//! The deterministic final step carries no density and is excluded.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{BoundDenoiser, DenoiserParams, ModelError};
use crate::sampling::MultiviewTrajectory;
use crate::schedule::NoiseSchedule;
use crate::tape::{DenseArray, GradError, NodeId, Tape};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("pair is missing normalized rewards")]
    MissingNormalizedRewards,
    #[error("preference pair is unranked (equal joint rewards)")]
    UnrankedPair,
    #[error("pair members disagree on prompt or views")]
    MismatchedPair,
    #[error("loss over an empty batch")]
    EmptyBatch,
    #[error("advantage vector has {got} entries for {expected} views")]
    AdvantageArity { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Loss-shaping constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    /// Log-ratio scaling factor (1/eta multiplies ratio gaps).
    pub eta: f64,
    /// Preference deviation factor.
    pub beta_dpo: f64,
    /// Weighted-sum coefficient for the WS baseline.
    pub w_mv: f64,
    /// Symmetric per-step log-ratio clip bound.
    pub log_ratio_clip: f64,
}

impl ObjectiveConfig {
    /// Derives the clip bound from a probability floor (e.g. 1e-4).
    pub fn with_prob_floor(mut self, floor: f64) -> Self {
        self.log_ratio_clip = -floor.ln();
        self
    }
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { eta: 1.0, beta_dpo: 1.0, w_mv: 0.5, log_ratio_clip: -(1e-4f64).ln() }
    }
}

/// Raw and normalized rewards for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRecord {
    pub single_raw: Vec<f64>,
    pub joint_raw: f64,
    pub single_norm: Option<Vec<f64>>,
    pub joint_norm: Option<f64>,
}

impl RewardRecord {
    pub fn raw(single: Vec<f64>, joint: f64) -> Self {
        Self { single_raw: single, joint_raw: joint, single_norm: None, joint_norm: None }
    }

    fn joint_norm(&self) -> Result<f64, ObjectiveError> {
        self.joint_norm.ok_or(ObjectiveError::MissingNormalizedRewards)
    }

    fn single_norm(&self, v: usize) -> Result<f64, ObjectiveError> {
        self.single_norm
            .as_ref()
            .and_then(|s| s.get(v).copied())
            .ok_or(ObjectiveError::MissingNormalizedRewards)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrajectory {
    pub trajectory: MultiviewTrajectory,
    pub rewards: RewardRecord,
}

/// A (standard, refined-or-second-standard) trajectory pair for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    /// Standard-sampling member.
    pub first: ScoredTrajectory,
    /// ZMV member for zigzag methods; a second standard member otherwise.
    pub second: ScoredTrajectory,
}

impl TrajectoryPair {
    pub fn views(&self) -> usize {
        self.first.trajectory.views.len()
    }

    /// Both members must describe the same prompt and view set.
    pub fn check(&self) -> Result<(), ObjectiveError> {
        if self.first.trajectory.prompt != self.second.trajectory.prompt
            || self.first.trajectory.views != self.second.trajectory.views
        {
            return Err(ObjectiveError::MismatchedPair);
        }
        Ok(())
    }
}

/// Zigzag advantage: difference of normalized joint rewards, refined minus
/// standard.
pub fn zigzag_advantage(pair: &TrajectoryPair) -> Result<f64, ObjectiveError> {
    Ok(pair.second.rewards.joint_norm()? - pair.first.rewards.joint_norm()?)
}

/// Multiview-constrained reward: (R + lambda * R_mv) / (1 + lambda).
pub fn mvc_reward(single: f64, joint: f64, lambda: f64) -> f64 {
    (single + lambda * joint) / (1.0 + lambda)
}

/// Weighted-sum reward: R + w_mv * R_mv.
pub fn ws_reward(single: f64, joint: f64, w_mv: f64) -> f64 {
    single + w_mv * joint
}

/// Per-view multiview-constrained advantage from normalized rewards.
pub fn mvc_advantage(pair: &TrajectoryPair, v: usize, lambda: f64) -> Result<f64, ObjectiveError> {
    let z = mvc_reward(pair.second.rewards.single_norm(v)?, pair.second.rewards.joint_norm()?, lambda);
    let s = mvc_reward(pair.first.rewards.single_norm(v)?, pair.first.rewards.joint_norm()?, lambda);
    Ok(z - s)
}

/// Symmetric clamp of a per-step log-ratio.
pub fn clip_log_ratio(raw: f64, bound: f64) -> f64 {
    raw.clamp(-bound, bound)
}

/// Value and named parameter gradients of a batch loss.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub grads: BTreeMap<String, DenseArray>,
}

fn accumulate(
    into: &mut BTreeMap<String, DenseArray>,
    named: &BTreeMap<String, DenseArray>,
    weight: f64,
) {
    for (name, grad) in named {
        match into.get_mut(name) {
            Some(acc) => {
                for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                    *a += weight * g;
                }
            }
            None => {
                let mut scaled = grad.clone();
                for g in scaled.data_mut() {
                    *g *= weight;
                }
                into.insert(name.clone(), scaled);
            }
        }
    }
}

/// Context node: per-view `from` latents summed in view-id order.
fn context_node(
    tape: &mut Tape,
    views: &[usize],
    x_nodes: &[NodeId],
) -> Result<NodeId, ObjectiveError> {
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by_key(|&i| views[i]);
    let mut acc = x_nodes[order[0]];
    for &i in &order[1..] {
        acc = tape.add(acc, x_nodes[i])?;
    }
    Ok(tape.scale(acc, 1.0 / views.len() as f64))
}

/// Per-stochastic-step, per-view log-probability nodes of a stored
/// trajectory under `bound`. Outer index runs over records with t >= 2 in
/// stored order (t = T down to 2).
fn log_prob_nodes(
    tape: &mut Tape,
    bound: &BoundDenoiser,
    schedule: &NoiseSchedule,
    traj: &MultiviewTrajectory,
) -> Result<Vec<Vec<NodeId>>, ObjectiveError> {
    let mut out = Vec::new();
    for record in &traj.steps {
        if record.t < 2 {
            continue;
        }
        let x_nodes: Vec<NodeId> =
            record.from.iter().map(|x| tape.leaf(DenseArray::vector(x))).collect();
        let ctx = context_node(tape, &traj.views, &x_nodes)?;
        let mut row = Vec::with_capacity(traj.views.len());
        for (i, &view) in traj.views.iter().enumerate() {
            let prev_leaf = tape.leaf(DenseArray::vector(&record.to[i]));
            let lp = bound.step_log_prob(
                tape,
                schedule,
                prev_leaf,
                x_nodes[i],
                view,
                record.t,
                ctx,
                record.omega,
            )?;
            row.push(lp);
        }
        out.push(row);
    }
    Ok(out)
}

/// Clamped per-step log-ratio nodes log p_cur - log p_ref on a stored
/// trajectory; same indexing as [`log_prob_nodes`].
fn log_ratio_nodes(
    tape: &mut Tape,
    current: &BoundDenoiser,
    reference: &BoundDenoiser,
    schedule: &NoiseSchedule,
    traj: &MultiviewTrajectory,
    clip: f64,
) -> Result<Vec<Vec<NodeId>>, ObjectiveError> {
    let cur = log_prob_nodes(tape, current, schedule, traj)?;
    let prev = log_prob_nodes(tape, reference, schedule, traj)?;
    let mut out = Vec::with_capacity(cur.len());
    for (crow, prow) in cur.into_iter().zip(prev) {
        let mut row = Vec::with_capacity(crow.len());
        for (c, p) in crow.into_iter().zip(prow) {
            let ratio = tape.sub(c, p)?;
            row.push(tape.clamp(ratio, -clip, clip));
        }
        out.push(row);
    }
    Ok(out)
}

fn sum_nodes(tape: &mut Tape, nodes: impl IntoIterator<Item = NodeId>) -> Option<NodeId> {
    let mut iter = nodes.into_iter();
    let first = iter.next()?;
    let mut acc = first;
    for n in iter {
        acc = tape.add(acc, n).expect("scalar accumulation");
    }
    Some(acc)
}

/// Policy-gradient loss: mean over trajectories of
/// -sum_v w_v * sum_t log p(x_{t-1}^v | x_t^v). With every view weight equal
/// to the joint reward this is the multiview policy-gradient estimator; with
/// constrained per-view rewards it is the constrained variant.
pub fn weighted_pg_loss(
    batch: &[(&MultiviewTrajectory, &[f64])],
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
) -> Result<LossResult, ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for (traj, weights) in batch {
        if weights.len() != traj.views.len() {
            return Err(ObjectiveError::AdvantageArity {
                expected: traj.views.len(),
                got: weights.len(),
            });
        }
        let mut tape = Tape::new();
        let bound = BoundDenoiser::bind(&mut tape, params, traj.prompt, &traj.views, true)?;
        let lps = log_prob_nodes(&mut tape, &bound, schedule, traj)?;
        let mut weighted = Vec::new();
        for v in 0..traj.views.len() {
            if let Some(view_sum) = sum_nodes(&mut tape, lps.iter().map(|row| row[v])) {
                weighted.push(tape.scale(view_sum, -weights[v]));
            }
        }
        let loss = sum_nodes(&mut tape, weighted).ok_or(ObjectiveError::EmptyBatch)?;
        value += tape.value(loss).item() * scale;
        let gmap = tape.backward(loss)?;
        accumulate(&mut grads, &bound.named_grads(&gmap), scale);
    }
    Ok(LossResult { value, grads })
}

/// Multiview policy gradient: joint reward weights every view.
pub fn mv_pg_loss(
    batch: &[(&MultiviewTrajectory, f64)],
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
) -> Result<LossResult, ObjectiveError> {
    let weights: Vec<Vec<f64>> =
        batch.iter().map(|(traj, r)| vec![*r; traj.views.len()]).collect();
    let expanded: Vec<(&MultiviewTrajectory, &[f64])> =
        batch.iter().zip(&weights).map(|((traj, _), w)| (*traj, w.as_slice())).collect();
    weighted_pg_loss(&expanded, params, schedule)
}

/// Preference loss over ranked pairs: -log sigma(beta * (sum of winner
/// log-ratios - sum of loser log-ratios)) against a frozen reference,
/// averaged over the batch. Ranking is by raw joint reward; ties are a
/// contract error (the trainer skips them).
pub fn mv_dpo_loss(
    pairs: &[&TrajectoryPair],
    params: &DenoiserParams,
    ref_params: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &ObjectiveConfig,
) -> Result<LossResult, ObjectiveError> {
    if pairs.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for pair in pairs {
        pair.check()?;
        let (winner, loser) = if pair.second.rewards.joint_raw > pair.first.rewards.joint_raw {
            (&pair.second.trajectory, &pair.first.trajectory)
        } else if pair.first.rewards.joint_raw > pair.second.rewards.joint_raw {
            (&pair.first.trajectory, &pair.second.trajectory)
        } else {
            return Err(ObjectiveError::UnrankedPair);
        };
        let mut tape = Tape::new();
        let cur = BoundDenoiser::bind(&mut tape, params, winner.prompt, &winner.views, true)?;
        let reference =
            BoundDenoiser::bind(&mut tape, ref_params, winner.prompt, &winner.views, false)?;
        let w_ratios =
            log_ratio_nodes(&mut tape, &cur, &reference, schedule, winner, config.log_ratio_clip)?;
        let l_ratios =
            log_ratio_nodes(&mut tape, &cur, &reference, schedule, loser, config.log_ratio_clip)?;
        let w_sum = sum_nodes(&mut tape, w_ratios.into_iter().flatten())
            .ok_or(ObjectiveError::EmptyBatch)?;
        let l_sum = sum_nodes(&mut tape, l_ratios.into_iter().flatten())
            .ok_or(ObjectiveError::EmptyBatch)?;
        let margin = tape.sub(w_sum, l_sum)?;
        let scaled = tape.scale(margin, config.beta_dpo);
        let ls = tape.log_sigmoid(scaled);
        let loss = tape.scale(ls, -1.0);
        value += tape.value(loss).item() * scale;
        let gmap = tape.backward(loss)?;
        accumulate(&mut grads, &cur.named_grads(&gmap), scale);
    }
    Ok(LossResult { value, grads })
}

/// Pooled reward-difference loss: squared error between (1/eta) times the
/// pooled log-ratio gap (second minus first, summed over steps and views)
/// and `target(pair)`, averaged over the batch.
fn pooled_residual_loss(
    pairs: &[&TrajectoryPair],
    targets: &[f64],
    params: &DenoiserParams,
    prev_params: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &ObjectiveConfig,
) -> Result<LossResult, ObjectiveError> {
    if pairs.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for (pair, &target) in pairs.iter().zip(targets) {
        pair.check()?;
        let traj_s = &pair.first.trajectory;
        let traj_z = &pair.second.trajectory;
        let mut tape = Tape::new();
        let cur = BoundDenoiser::bind(&mut tape, params, traj_s.prompt, &traj_s.views, true)?;
        let prev =
            BoundDenoiser::bind(&mut tape, prev_params, traj_s.prompt, &traj_s.views, false)?;
        let z_ratios =
            log_ratio_nodes(&mut tape, &cur, &prev, schedule, traj_z, config.log_ratio_clip)?;
        let s_ratios =
            log_ratio_nodes(&mut tape, &cur, &prev, schedule, traj_s, config.log_ratio_clip)?;
        let z_sum = sum_nodes(&mut tape, z_ratios.into_iter().flatten())
            .ok_or(ObjectiveError::EmptyBatch)?;
        let s_sum = sum_nodes(&mut tape, s_ratios.into_iter().flatten())
            .ok_or(ObjectiveError::EmptyBatch)?;
        let gap = tape.sub(z_sum, s_sum)?;
        let scaled = tape.scale(gap, 1.0 / config.eta);
        let target_leaf = tape.leaf_scalar(target);
        let loss = tape.squared_error(scaled, target_leaf)?;
        value += tape.value(loss).item() * scale;
        let gmap = tape.backward(loss)?;
        accumulate(&mut grads, &cur.named_grads(&gmap), scale);
    }
    Ok(LossResult { value, grads })
}

/// Reward-difference loss over two standard trajectories; the target is the
/// normalized joint-reward difference.
pub fn mv_rdl_loss(
    pairs: &[&TrajectoryPair],
    params: &DenoiserParams,
    prev_params: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &ObjectiveConfig,
) -> Result<LossResult, ObjectiveError> {
    let targets: Vec<f64> =
        pairs.iter().map(|p| zigzag_advantage(p)).collect::<Result<_, _>>()?;
    pooled_residual_loss(pairs, &targets, params, prev_params, schedule, config)
}

/// Zigzag advantage learning: pooled log-ratio gap regressed onto the
/// zigzag advantage.
pub fn mv_zigal_loss(
    pairs: &[&TrajectoryPair],
    params: &DenoiserParams,
    prev_params: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &ObjectiveConfig,
) -> Result<LossResult, ObjectiveError> {
    let targets: Vec<f64> =
        pairs.iter().map(|p| zigzag_advantage(p)).collect::<Result<_, _>>()?;
    pooled_residual_loss(pairs, &targets, params, prev_params, schedule, config)
}

/// Per-view residual loss: sum over steps and views of the squared error
/// between the per-step per-view log-ratio gap (scaled by 1/eta) and that
/// view's advantage, averaged over the batch. Drives the constrained,
/// single-view-only, and weighted-sum advantage-learning variants, which
/// differ only in how the advantages are built.
pub fn per_view_residual_loss(
    pairs: &[(&TrajectoryPair, &[f64])],
    params: &DenoiserParams,
    prev_params: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &ObjectiveConfig,
) -> Result<LossResult, ObjectiveError> {
    if pairs.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for (pair, advantages) in pairs {
        pair.check()?;
        let views = pair.views();
        if advantages.len() != views {
            return Err(ObjectiveError::AdvantageArity { expected: views, got: advantages.len() });
        }
        let traj_s = &pair.first.trajectory;
        let traj_z = &pair.second.trajectory;
        let mut tape = Tape::new();
        let cur = BoundDenoiser::bind(&mut tape, params, traj_s.prompt, &traj_s.views, true)?;
        let prev =
            BoundDenoiser::bind(&mut tape, prev_params, traj_s.prompt, &traj_s.views, false)?;
        let z_ratios =
            log_ratio_nodes(&mut tape, &cur, &prev, schedule, traj_z, config.log_ratio_clip)?;
        let s_ratios =
            log_ratio_nodes(&mut tape, &cur, &prev, schedule, traj_s, config.log_ratio_clip)?;
        let mut residuals = Vec::new();
        for (zrow, srow) in z_ratios.iter().zip(&s_ratios) {
            for v in 0..views {
                let gap = tape.sub(zrow[v], srow[v])?;
                let scaled = tape.scale(gap, 1.0 / config.eta);
                let adv = tape.leaf_scalar(advantages[v]);
                residuals.push(tape.squared_error(scaled, adv)?);
            }
        }
        let loss = sum_nodes(&mut tape, residuals).ok_or(ObjectiveError::EmptyBatch)?;
        value += tape.value(loss).item() * scale;
        let gmap = tape.backward(loss)?;
        accumulate(&mut grads, &cur.named_grads(&gmap), scale);
    }
    Ok(LossResult { value, grads })
}

/// Multiview-constrained zigzag advantage learning: per-view residuals
/// against the constrained advantages computed at the current multiplier.
pub fn mvc_zigal_loss(
    pairs: &[(&TrajectoryPair, &[f64])],
    params: &DenoiserParams,
    prev_params: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &ObjectiveConfig,
) -> Result<LossResult, ObjectiveError> {
    per_view_residual_loss(pairs, params, prev_params, schedule, config)
}
