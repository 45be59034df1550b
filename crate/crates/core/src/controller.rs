//! Lagrangian primal-dual constraint state: the multiplier lambda and the
//! self-paced threshold tau.
//!
//! Per training epoch the trainer computes the batch-average joint reward,
//! updates tau (EMA of achieved rewards, or a fixed value), then updates
//! lambda with an adaptive step: a large step on violation to reinforce the
//! constraint quickly, a small step on satisfaction for stability. Lambda is
//! clamped to [0, lambda_max] after every update.
//!
//! The gate/magnitude split: the update magnitude and the violation gate may
//! legitimately read different tau generations (the post-update tau gates,
//! the pre-update tau scales), so both are explicit parameters; a config
//! switch collapses them to the single current tau.

use thiserror::Error;

use crate::objectives::TrajectoryPair;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("batch average of an empty batch")]
    EmptyBatch,
    #[error("pair {0} has no normalized joint rewards")]
    UnscoredPair(usize),
    #[error("invalid controller config: {0}")]
    BadConfig(String),
}

/// Constraint threshold source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauMode {
    /// EMA of the achieved batch-average joint reward.
    SelfPaced,
    Fixed(f64),
}

/// Dual step-size source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// alpha_plus on violation, alpha_minus on satisfaction.
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    /// EMA smoothing factor for the self-paced threshold.
    pub beta_tau: f64,
    pub lambda_init: f64,
    pub lambda_max: f64,
    pub tau_mode: TauMode,
    pub alpha_mode: AlphaMode,
    /// Use the current tau for both the gate and the update magnitude
    /// instead of gating on the updated tau and scaling by the previous one.
    pub single_tau: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            alpha_plus: 0.1,
            alpha_minus: 0.01,
            beta_tau: 0.99,
            lambda_init: 0.0,
            lambda_max: 5.0,
            tau_mode: TauMode::SelfPaced,
            alpha_mode: AlphaMode::Adaptive,
            single_tau: false,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if matches!(self.alpha_mode, AlphaMode::Adaptive)
            && !(self.alpha_plus >= self.alpha_minus && self.alpha_minus > 0.0)
        {
            return Err(ControllerError::BadConfig(format!(
                "adaptive mode needs alpha_plus >= alpha_minus > 0, got ({}, {})",
                self.alpha_plus, self.alpha_minus
            )));
        }
        if !(0.0..1.0).contains(&self.beta_tau) {
            return Err(ControllerError::BadConfig(format!("beta_tau {} outside [0, 1)", self.beta_tau)));
        }
        if self.lambda_init < 0.0 {
            return Err(ControllerError::BadConfig(format!("lambda_init {} < 0", self.lambda_init)));
        }
        if self.lambda_max <= 0.0 {
            return Err(ControllerError::BadConfig(format!("lambda_max {} <= 0", self.lambda_max)));
        }
        Ok(())
    }
}

/// Lagrange multiplier and threshold with their update bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintState {
    pub lambda: f64,
    pub tau: f64,
    pub initialized: bool,
}

impl ConstraintState {
    pub fn new(config: &ControllerConfig) -> Self {
        let tau = match config.tau_mode {
            TauMode::Fixed(v) => v,
            TauMode::SelfPaced => 0.0,
        };
        Self { lambda: config.lambda_init.clamp(0.0, config.lambda_max), tau, initialized: false }
    }
}

/// (1/2B) sum over pairs of both members' normalized joint rewards.
pub fn batch_avg_joint_reward(pairs: &[TrajectoryPair]) -> Result<f64, ControllerError> {
    if pairs.is_empty() {
        return Err(ControllerError::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, pair) in pairs.iter().enumerate() {
        let s = pair.first.rewards.joint_norm.ok_or(ControllerError::UnscoredPair(i))?;
        let z = pair.second.rewards.joint_norm.ok_or(ControllerError::UnscoredPair(i))?;
        total += s + z;
    }
    Ok(total / (2.0 * pairs.len() as f64))
}

/// Threshold update: first call adopts `r_bar`, later calls blend by EMA.
/// Fixed mode returns the fixed value. Returns the new tau.
pub fn update_tau(state: &mut ConstraintState, r_bar: f64, config: &ControllerConfig) -> f64 {
    match config.tau_mode {
        TauMode::Fixed(v) => {
            state.tau = v;
            state.initialized = true;
        }
        TauMode::SelfPaced => {
            if state.initialized {
                state.tau = config.beta_tau * state.tau + (1.0 - config.beta_tau) * r_bar;
            } else {
                state.tau = r_bar;
                state.initialized = true;
            }
        }
    }
    state.tau
}

/// Multiplier update: step alpha_plus when `r_bar < tau_for_gate` else
/// alpha_minus (or the fixed step), move by alpha * (tau_for_magnitude -
/// r_bar), clamp to [0, lambda_max]. Returns the new lambda.
pub fn update_lambda(
    state: &mut ConstraintState,
    r_bar: f64,
    tau_for_gate: f64,
    tau_for_magnitude: f64,
    config: &ControllerConfig,
) -> f64 {
    let violated = r_bar < tau_for_gate;
    let alpha = match config.alpha_mode {
        AlphaMode::Adaptive => {
            if violated {
                config.alpha_plus
            } else {
                config.alpha_minus
            }
        }
        AlphaMode::Fixed(a) => a,
    };
    state.lambda = (state.lambda + alpha * (tau_for_magnitude - r_bar)).clamp(0.0, config.lambda_max);
    state.lambda
}

/// Outcome of one per-epoch controller update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerUpdate {
    pub lambda: f64,
    pub tau: f64,
    pub violated: bool,
}

/// The per-epoch sequence: update tau from `r_bar`, gate on the updated tau,
/// scale by the previous tau (or the single current tau when configured).
/// On the first epoch the previous tau defaults to the freshly initialized
/// value, leaving lambda unchanged.
pub fn epoch_update(
    state: &mut ConstraintState,
    r_bar: f64,
    config: &ControllerConfig,
) -> ControllerUpdate {
    let tau_prev = if state.initialized { Some(state.tau) } else { None };
    let tau_new = update_tau(state, r_bar, config);
    let tau_magnitude = if config.single_tau { tau_new } else { tau_prev.unwrap_or(tau_new) };
    let violated = r_bar < tau_new;
    let lambda = update_lambda(state, r_bar, tau_new, tau_magnitude, config);
    ControllerUpdate { lambda, tau: tau_new, violated }
}
