//! Training configuration: defaults, strict key=value parsing, canonical
//! serialization, and hashing.
//!
//! The config format is flat `section.key = value` text; `#` starts a
//! comment. Parsing is strict: unknown keys, type errors, and constraint
//! violations are reported with the key path. The full key list:
//!
//! ```text
//! train.method               mv-pg | mv-dpo | mv-rdl | mv-zigal | zigal |
//!                            ws-zigal | mvc-zigpg | mvc-zigal
//! train.views                views per trajectory (V)
//! train.steps                sampling steps (T)
//! train.latent_dim           scene-point dimension (d)
//! train.batch                trajectory pairs per batch (B)
//! train.batches_per_epoch    pair batches collected per epoch
//! train.epochs               training epochs (K)
//! train.inner_epochs         inner optimization epochs (N)
//! train.seed                 master seed
//! train.prompt_count         size of the prompt universe
//! train.checkpoint_interval  epochs between checkpoints
//! train.deterministic_timing record wall_ms as 0 for byte-stable outputs
//! optim.lr                   learning rate
//! optim.beta1, optim.beta2   moment decay factors
//! optim.eps                  optimizer epsilon
//! optim.weight_decay         decoupled weight decay
//! optim.max_grad_norm        global gradient-norm cap
//! normalize.decay            running-statistics decay
//! normalize.eps              variance floor
//! normalize.strict_batch     per-batch statistics only
//! guidance.omega_high        high guidance scale
//! guidance.omega_low         low (inversion) guidance scale
//! objective.eta              log-ratio scaling factor
//! objective.beta_dpo         preference deviation factor
//! objective.w_mv             weighted-sum coefficient
//! objective.prob_floor       probability floor implying the log-ratio clip
//! zigzag.mode                first-step | full-step | explicit
//! zigzag.steps               comma-separated steps (explicit mode)
//! zigzag.passes              zigzag passes per scheduled step
//! controller.alpha_plus      dual step on violation
//! controller.alpha_minus     dual step on satisfaction
//! controller.beta_tau        threshold EMA factor
//! controller.lambda_init     initial multiplier
//! controller.lambda_max      multiplier cap
//! controller.tau_mode        self-paced | fixed
//! controller.tau_fixed       threshold value in fixed mode
//! controller.alpha_mode      adaptive | fixed
//! controller.alpha_fixed     dual step in fixed mode
//! controller.single_tau      use one tau for gate and magnitude
//! scene.gamma                distractor offset norm
//! pretrain.steps             pretraining steps
//! pretrain.lr                pretraining learning rate
//! pretrain.batch             scenes per pretraining step
//! pretrain.dropout           conditioning dropout probability
//! eval.prompts               evaluation prompt count
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{AlphaMode, ControllerConfig, TauMode};
use crate::metrics::format_f64;
use crate::model::GuidanceConfig;
use crate::objectives::ObjectiveConfig;
use crate::optimizer::AdamConfig;
use crate::zigzag::{ZigzagMode, ZigzagSchedule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {detail}")]
    BadValue { key: String, detail: String },
    #[error("key `{key}`: constraint violated: {detail}")]
    Constraint { key: String, detail: String },
}

/// Policy-optimization method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MvPg,
    MvDpo,
    MvRdl,
    MvZigal,
    Zigal,
    WsZigal,
    MvcZigpg,
    MvcZigal,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::MvPg,
        Method::MvDpo,
        Method::MvRdl,
        Method::MvZigal,
        Method::Zigal,
        Method::WsZigal,
        Method::MvcZigpg,
        Method::MvcZigal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MvPg => "mv-pg",
            Method::MvDpo => "mv-dpo",
            Method::MvRdl => "mv-rdl",
            Method::MvZigal => "mv-zigal",
            Method::Zigal => "zigal",
            Method::WsZigal => "ws-zigal",
            Method::MvcZigpg => "mvc-zigpg",
            Method::MvcZigal => "mvc-zigal",
        }
    }

    /// Whether the second trajectory of each pair comes from ZMV sampling.
    pub fn uses_zigzag_pair(self) -> bool {
        matches!(
            self,
            Method::MvZigal | Method::Zigal | Method::WsZigal | Method::MvcZigpg | Method::MvcZigal
        )
    }

    /// Whether the Lagrangian controller runs.
    pub fn uses_controller(self) -> bool {
        matches!(self, Method::MvcZigpg | Method::MvcZigal)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub views: usize,
    pub steps: usize,
    pub latent_dim: usize,
    pub batch: usize,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub inner_epochs: usize,
    pub seed: u64,
    pub prompt_count: usize,
    pub checkpoint_interval: usize,
    pub deterministic_timing: bool,
    pub optim: AdamConfig,
    pub max_grad_norm: f64,
    pub norm_decay: f64,
    pub norm_eps: f64,
    pub norm_strict_batch: bool,
    pub guidance: GuidanceConfig,
    pub objective: ObjectiveConfig,
    pub prob_floor: f64,
    pub zigzag: ZigzagSchedule,
    pub controller: ControllerConfig,
    pub gamma: f64,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub pretrain_dropout: f64,
    pub eval_prompts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::MvcZigal,
            views: 4,
            steps: 4,
            latent_dim: 2,
            batch: 8,
            batches_per_epoch: 1,
            epochs: 50,
            inner_epochs: 1,
            seed: 42,
            prompt_count: 16,
            checkpoint_interval: 10,
            deterministic_timing: true,
            optim: AdamConfig::default(),
            max_grad_norm: 5.0,
            norm_decay: 0.95,
            norm_eps: 1e-8,
            norm_strict_batch: false,
            guidance: GuidanceConfig::default(),
            objective: ObjectiveConfig::default(),
            prob_floor: 1e-4,
            zigzag: ZigzagSchedule::first_step(),
            controller: ControllerConfig::default(),
            gamma: crate::scene::DEFAULT_GAMMA,
            pretrain_steps: 3000,
            pretrain_lr: 2e-3,
            pretrain_batch: 4,
            pretrain_dropout: 0.1,
            eval_prompts: 16,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| ConfigError::BadValue { key: key.into(), detail: e.to_string() })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => {
            Err(ConfigError::BadValue { key: key.into(), detail: format!("not a bool: `{other}`") })
        }
    }
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "train.method" => self.method = parse_value(key, value)?,
            "train.views" => self.views = parse_value(key, value)?,
            "train.steps" => self.steps = parse_value(key, value)?,
            "train.latent_dim" => self.latent_dim = parse_value(key, value)?,
            "train.batch" => self.batch = parse_value(key, value)?,
            "train.batches_per_epoch" => self.batches_per_epoch = parse_value(key, value)?,
            "train.epochs" => self.epochs = parse_value(key, value)?,
            "train.inner_epochs" => self.inner_epochs = parse_value(key, value)?,
            "train.seed" => self.seed = parse_value(key, value)?,
            "train.prompt_count" => self.prompt_count = parse_value(key, value)?,
            "train.checkpoint_interval" => self.checkpoint_interval = parse_value(key, value)?,
            "train.deterministic_timing" => self.deterministic_timing = parse_bool(key, value)?,
            "optim.lr" => self.optim.lr = parse_value(key, value)?,
            "optim.beta1" => self.optim.beta1 = parse_value(key, value)?,
            "optim.beta2" => self.optim.beta2 = parse_value(key, value)?,
            "optim.eps" => self.optim.eps = parse_value(key, value)?,
            "optim.weight_decay" => self.optim.weight_decay = parse_value(key, value)?,
            "optim.max_grad_norm" => self.max_grad_norm = parse_value(key, value)?,
            "normalize.decay" => self.norm_decay = parse_value(key, value)?,
            "normalize.eps" => self.norm_eps = parse_value(key, value)?,
            "normalize.strict_batch" => self.norm_strict_batch = parse_bool(key, value)?,
            "guidance.omega_high" => self.guidance.omega_high = parse_value(key, value)?,
            "guidance.omega_low" => self.guidance.omega_low = parse_value(key, value)?,
            "objective.eta" => self.objective.eta = parse_value(key, value)?,
            "objective.beta_dpo" => self.objective.beta_dpo = parse_value(key, value)?,
            "objective.w_mv" => self.objective.w_mv = parse_value(key, value)?,
            "objective.prob_floor" => self.prob_floor = parse_value(key, value)?,
            "zigzag.mode" => {
                self.zigzag.mode = match value {
                    "first-step" => ZigzagMode::FirstStep,
                    "full-step" => ZigzagMode::FullStep,
                    "explicit" => ZigzagMode::Explicit(BTreeSet::new()),
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            detail: format!("unknown mode `{other}`"),
                        })
                    }
                }
            }
            "zigzag.steps" => {
                let steps: BTreeSet<usize> = if value.trim().is_empty() {
                    BTreeSet::new()
                } else {
                    value
                        .split(',')
                        .map(|s| parse_value(key, s.trim()))
                        .collect::<Result<_, _>>()?
                };
                self.zigzag.mode = ZigzagMode::Explicit(steps);
            }
            "zigzag.passes" => self.zigzag.passes_per_step = parse_value(key, value)?,
            "controller.alpha_plus" => self.controller.alpha_plus = parse_value(key, value)?,
            "controller.alpha_minus" => self.controller.alpha_minus = parse_value(key, value)?,
            "controller.beta_tau" => self.controller.beta_tau = parse_value(key, value)?,
            "controller.lambda_init" => self.controller.lambda_init = parse_value(key, value)?,
            "controller.lambda_max" => self.controller.lambda_max = parse_value(key, value)?,
            "controller.tau_mode" => {
                self.controller.tau_mode = match value {
                    "self-paced" => TauMode::SelfPaced,
                    "fixed" => match self.controller.tau_mode {
                        TauMode::Fixed(v) => TauMode::Fixed(v),
                        TauMode::SelfPaced => TauMode::Fixed(0.0),
                    },
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            detail: format!("unknown tau mode `{other}`"),
                        })
                    }
                }
            }
            "controller.tau_fixed" => {
                self.controller.tau_mode = TauMode::Fixed(parse_value(key, value)?)
            }
            "controller.alpha_mode" => {
                self.controller.alpha_mode = match value {
                    "adaptive" => AlphaMode::Adaptive,
                    "fixed" => match self.controller.alpha_mode {
                        AlphaMode::Fixed(v) => AlphaMode::Fixed(v),
                        AlphaMode::Adaptive => AlphaMode::Fixed(0.1),
                    },
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            detail: format!("unknown alpha mode `{other}`"),
                        })
                    }
                }
            }
            "controller.alpha_fixed" => {
                self.controller.alpha_mode = AlphaMode::Fixed(parse_value(key, value)?)
            }
            "controller.single_tau" => self.controller.single_tau = parse_bool(key, value)?,
            "scene.gamma" => self.gamma = parse_value(key, value)?,
            "pretrain.steps" => self.pretrain_steps = parse_value(key, value)?,
            "pretrain.lr" => self.pretrain_lr = parse_value(key, value)?,
            "pretrain.batch" => self.pretrain_batch = parse_value(key, value)?,
            "pretrain.dropout" => self.pretrain_dropout = parse_value(key, value)?,
            "eval.prompts" => self.eval_prompts = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: usize| -> Result<(), ConfigError> {
            if v == 0 {
                Err(ConfigError::Constraint { key: key.into(), detail: "must be >= 1".into() })
            } else {
                Ok(())
            }
        };
        positive("train.views", self.views)?;
        positive("train.latent_dim", self.latent_dim)?;
        positive("train.batch", self.batch)?;
        positive("train.batches_per_epoch", self.batches_per_epoch)?;
        positive("train.inner_epochs", self.inner_epochs)?;
        positive("train.prompt_count", self.prompt_count)?;
        positive("train.checkpoint_interval", self.checkpoint_interval)?;
        positive("eval.prompts", self.eval_prompts)?;
        if self.steps < 2 {
            return Err(ConfigError::Constraint {
                key: "train.steps".into(),
                detail: "needs at least 2 sampling steps".into(),
            });
        }
        if !(self.optim.lr > 0.0) {
            return Err(ConfigError::Constraint {
                key: "optim.lr".into(),
                detail: format!("must be positive, got {}", self.optim.lr),
            });
        }
        if !(self.pretrain_lr > 0.0) {
            return Err(ConfigError::Constraint {
                key: "pretrain.lr".into(),
                detail: format!("must be positive, got {}", self.pretrain_lr),
            });
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(ConfigError::Constraint {
                key: "optim.max_grad_norm".into(),
                detail: "must be positive".into(),
            });
        }
        if !(0.0..1.0).contains(&self.norm_decay) {
            return Err(ConfigError::Constraint {
                key: "normalize.decay".into(),
                detail: format!("{} outside [0, 1)", self.norm_decay),
            });
        }
        if !(0.0..=1.0).contains(&self.pretrain_dropout) {
            return Err(ConfigError::Constraint {
                key: "pretrain.dropout".into(),
                detail: "probability outside [0, 1]".into(),
            });
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0) {
            return Err(ConfigError::Constraint {
                key: "objective.prob_floor".into(),
                detail: "must lie in (0, 1)".into(),
            });
        }
        if !(self.objective.eta > 0.0) {
            return Err(ConfigError::Constraint {
                key: "objective.eta".into(),
                detail: "must be positive".into(),
            });
        }
        if !(self.objective.beta_dpo > 0.0) {
            return Err(ConfigError::Constraint {
                key: "objective.beta_dpo".into(),
                detail: "must be positive".into(),
            });
        }
        if self.objective.w_mv < 0.0 {
            return Err(ConfigError::Constraint {
                key: "objective.w_mv".into(),
                detail: "must be nonnegative".into(),
            });
        }
        GuidanceConfig::new(self.guidance.omega_high, self.guidance.omega_low).map_err(|e| {
            ConfigError::Constraint { key: "guidance.omega_high".into(), detail: e.to_string() }
        })?;
        self.zigzag.active_steps(self.steps).map_err(|e| ConfigError::Constraint {
            key: "zigzag.steps".into(),
            detail: e.to_string(),
        })?;
        self.controller.validate().map_err(|e| ConfigError::Constraint {
            key: "controller".into(),
            detail: e.to_string(),
        })?;
        if !(self.gamma >= 0.0) {
            return Err(ConfigError::Constraint {
                key: "scene.gamma".into(),
                detail: "must be nonnegative".into(),
            });
        }
        Ok(())
    }

    /// Canonical flat text; parsing it back reproduces the config.
    pub fn canonical_text(&self) -> String {
        let mut lines = Vec::new();
        let mut kv = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        kv("train.method", self.method.name().into());
        kv("train.views", self.views.to_string());
        kv("train.steps", self.steps.to_string());
        kv("train.latent_dim", self.latent_dim.to_string());
        kv("train.batch", self.batch.to_string());
        kv("train.batches_per_epoch", self.batches_per_epoch.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.inner_epochs", self.inner_epochs.to_string());
        kv("train.seed", self.seed.to_string());
        kv("train.prompt_count", self.prompt_count.to_string());
        kv("train.checkpoint_interval", self.checkpoint_interval.to_string());
        kv("train.deterministic_timing", self.deterministic_timing.to_string());
        kv("optim.lr", format_f64(self.optim.lr));
        kv("optim.beta1", format_f64(self.optim.beta1));
        kv("optim.beta2", format_f64(self.optim.beta2));
        kv("optim.eps", format_f64(self.optim.eps));
        kv("optim.weight_decay", format_f64(self.optim.weight_decay));
        kv("optim.max_grad_norm", format_f64(self.max_grad_norm));
        kv("normalize.decay", format_f64(self.norm_decay));
        kv("normalize.eps", format_f64(self.norm_eps));
        kv("normalize.strict_batch", self.norm_strict_batch.to_string());
        kv("guidance.omega_high", format_f64(self.guidance.omega_high));
        kv("guidance.omega_low", format_f64(self.guidance.omega_low));
        kv("objective.eta", format_f64(self.objective.eta));
        kv("objective.beta_dpo", format_f64(self.objective.beta_dpo));
        kv("objective.w_mv", format_f64(self.objective.w_mv));
        kv("objective.prob_floor", format_f64(self.prob_floor));
        match &self.zigzag.mode {
            ZigzagMode::FirstStep => kv("zigzag.mode", "first-step".into()),
            ZigzagMode::FullStep => kv("zigzag.mode", "full-step".into()),
            ZigzagMode::Explicit(steps) => {
                kv(
                    "zigzag.steps",
                    steps.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
                );
            }
        }
        kv("zigzag.passes", self.zigzag.passes_per_step.to_string());
        kv("controller.alpha_plus", format_f64(self.controller.alpha_plus));
        kv("controller.alpha_minus", format_f64(self.controller.alpha_minus));
        kv("controller.beta_tau", format_f64(self.controller.beta_tau));
        kv("controller.lambda_init", format_f64(self.controller.lambda_init));
        kv("controller.lambda_max", format_f64(self.controller.lambda_max));
        match self.controller.tau_mode {
            TauMode::SelfPaced => kv("controller.tau_mode", "self-paced".into()),
            TauMode::Fixed(v) => kv("controller.tau_fixed", format_f64(v)),
        }
        match self.controller.alpha_mode {
            AlphaMode::Adaptive => kv("controller.alpha_mode", "adaptive".into()),
            AlphaMode::Fixed(v) => kv("controller.alpha_fixed", format_f64(v)),
        }
        kv("controller.single_tau", self.controller.single_tau.to_string());
        kv("scene.gamma", format_f64(self.gamma));
        kv("pretrain.steps", self.pretrain_steps.to_string());
        kv("pretrain.lr", format_f64(self.pretrain_lr));
        kv("pretrain.batch", self.pretrain_batch.to_string());
        kv("pretrain.dropout", format_f64(self.pretrain_dropout));
        kv("eval.prompts", self.eval_prompts.to_string());
        lines.join("\n") + "\n"
    }

    /// First 16 hex characters of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The clip bound derived from the probability floor.
    pub fn objective_with_floor(&self) -> ObjectiveConfig {
        self.objective.with_prob_floor(self.prob_floor)
    }
}

/// Parses flat key=value text over the defaults; strict on unknown keys.
pub fn parse_config_str(text: &str) -> Result<TrainConfig, ConfigError> {
    let mut config = TrainConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: idx + 1, text: raw.into() })?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;
    Ok(config)
}

/// Reads and parses a config file.
pub fn parse_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    parse_config_str(&std::fs::read_to_string(path)?)
}
