//! Conditional noise predictor over d-dimensional scene points.
//!
//! A small tanh MLP conditioned on prompt embedding, view embedding, a fixed
//! one-hot time embedding, and a cross-view context feature (the mean of all
//! views' current latents). Guidance blends the conditional branch with an
//! unconditional branch whose prompt and view embeddings are zeroed; context
//! and time are retained in both branches.
//!
//! Two evaluation paths exist and share the arithmetic order: a plain path
//! for sampling and a tape path ([`BoundDenoiser`]) for differentiable
//! objectives.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::schedule::NoiseSchedule;
use crate::seeds;
use crate::tape::{DenseArray, GradError, GradientMap, NodeId, Tape};

pub const HIDDEN_WIDTH: usize = 64;
pub const EMBED_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown prompt id {0}")]
    UnknownPrompt(usize),
    #[error("unknown view id {0}")]
    UnknownView(usize),
    #[error("timestep {t} outside [1, {steps}]")]
    BadTimestep { t: usize, steps: usize },
    #[error("timestep 1 is deterministic and excluded from likelihood sums")]
    ExcludedStep,
    #[error("guidance scale must be nonnegative, got {0}")]
    InvalidOmega(f64),
    #[error("latent dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Classifier-free guidance scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub omega_high: f64,
    pub omega_low: f64,
}

impl GuidanceConfig {
    pub fn new(omega_high: f64, omega_low: f64) -> Result<Self, ModelError> {
        if !(omega_low >= 0.0) {
            return Err(ModelError::InvalidOmega(omega_low));
        }
        if !(omega_high >= omega_low) {
            return Err(ModelError::InvalidOmega(omega_high));
        }
        Ok(Self { omega_high, omega_low })
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { omega_high: 7.0, omega_low: 1.0 }
    }
}

/// All learnable arrays of the noise predictor plus embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub latent_dim: usize,
    pub time_steps: usize,
    pub w1: DenseArray,
    pub b1: DenseArray,
    pub w2: DenseArray,
    pub b2: DenseArray,
    pub w3: DenseArray,
    pub b3: DenseArray,
    /// One row per prompt id.
    pub prompt_embed: Vec<DenseArray>,
    /// One row per view id.
    pub view_embed: Vec<DenseArray>,
}

impl DenoiserParams {
    pub fn input_dim(&self) -> usize {
        2 * self.latent_dim + 2 * EMBED_DIM + self.time_steps
    }

    pub fn prompt_count(&self) -> usize {
        self.prompt_embed.len()
    }

    pub fn view_count(&self) -> usize {
        self.view_embed.len()
    }

    /// Random initialization; weights scaled by 1/sqrt(fan_in), biases zero.
    pub fn init(
        latent_dim: usize,
        time_steps: usize,
        prompt_count: usize,
        view_count: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seeds::stream(seed, &[0x1417]);
        let input_dim = 2 * latent_dim + 2 * EMBED_DIM + time_steps;
        let mut mat = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            let data: Vec<f64> =
                (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
            DenseArray::matrix(rows, cols, data).expect("init shape")
        };
        let w1 = mat(HIDDEN_WIDTH, input_dim);
        let w2 = mat(HIDDEN_WIDTH, HIDDEN_WIDTH);
        let w3 = mat(latent_dim, HIDDEN_WIDTH);
        let mut embed = |count: usize| -> Vec<DenseArray> {
            (0..count)
                .map(|_| {
                    let row: Vec<f64> =
                        (0..EMBED_DIM).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
                    DenseArray::vector(&row)
                })
                .collect()
        };
        Self {
            latent_dim,
            time_steps,
            w1,
            b1: DenseArray::zeros(&[HIDDEN_WIDTH]),
            w2,
            b2: DenseArray::zeros(&[HIDDEN_WIDTH]),
            w3,
            b3: DenseArray::zeros(&[latent_dim]),
            prompt_embed: embed(prompt_count),
            view_embed: embed(view_count),
        }
    }

    /// Stable (name, array) listing covering every learnable array.
    pub fn named_arrays(&self) -> Vec<(String, &DenseArray)> {
        let mut out: Vec<(String, &DenseArray)> = vec![
            ("net.w1".into(), &self.w1),
            ("net.b1".into(), &self.b1),
            ("net.w2".into(), &self.w2),
            ("net.b2".into(), &self.b2),
            ("net.w3".into(), &self.w3),
            ("net.b3".into(), &self.b3),
        ];
        for (i, row) in self.prompt_embed.iter().enumerate() {
            out.push((format!("embed.prompt.{i}"), row));
        }
        for (i, row) in self.view_embed.iter().enumerate() {
            out.push((format!("embed.view.{i}"), row));
        }
        out
    }

    /// Mutable access to a named array; used by the optimizer and loader.
    pub fn named_array_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        match name {
            "net.w1" => Some(&mut self.w1),
            "net.b1" => Some(&mut self.b1),
            "net.w2" => Some(&mut self.w2),
            "net.b2" => Some(&mut self.b2),
            "net.w3" => Some(&mut self.w3),
            "net.b3" => Some(&mut self.b3),
            _ => {
                if let Some(i) = name.strip_prefix("embed.prompt.") {
                    return self.prompt_embed.get_mut(i.parse::<usize>().ok()?);
                }
                if let Some(i) = name.strip_prefix("embed.view.") {
                    return self.view_embed.get_mut(i.parse::<usize>().ok()?);
                }
                None
            }
        }
    }

    fn check_ids(&self, prompt: usize, views: &[usize]) -> Result<(), ModelError> {
        if prompt >= self.prompt_embed.len() {
            return Err(ModelError::UnknownPrompt(prompt));
        }
        if let Some(&v) = views.iter().find(|&&v| v >= self.view_embed.len()) {
            return Err(ModelError::UnknownView(v));
        }
        Ok(())
    }

    fn check_t(&self, t: usize) -> Result<(), ModelError> {
        if t < 1 || t > self.time_steps {
            return Err(ModelError::BadTimestep { t, steps: self.time_steps });
        }
        Ok(())
    }

    /// One branch of the network on the plain path. `prompt`/`view` of `None`
    /// select the unconditional branch (zeroed embeddings).
    fn eps_branch_plain(
        &self,
        x: &[f64],
        prompt: Option<usize>,
        view: Option<usize>,
        t: usize,
        ctx: &[f64],
    ) -> Vec<f64> {
        let zero = [0.0; EMBED_DIM];
        let p_embed = prompt.map(|p| self.prompt_embed[p].data()).unwrap_or(&zero);
        let v_embed = view.map(|v| self.view_embed[v].data()).unwrap_or(&zero);
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(x);
        input.extend_from_slice(p_embed);
        input.extend_from_slice(v_embed);
        let mut onehot = vec![0.0; self.time_steps];
        onehot[t - 1] = 1.0;
        input.extend_from_slice(&onehot);
        input.extend_from_slice(ctx);

        let affine = |w: &DenseArray, b: &DenseArray, x: &[f64]| -> Vec<f64> {
            let (m, n) = (w.shape()[0], w.shape()[1]);
            let wd = w.data();
            let mut out = Vec::with_capacity(m);
            for i in 0..m {
                let mut acc = b.data()[i];
                for j in 0..n {
                    acc += wd[i * n + j] * x[j];
                }
                out.push(acc);
            }
            out
        };
        let h1: Vec<f64> = affine(&self.w1, &self.b1, &input).iter().map(|v| v.tanh()).collect();
        let h2: Vec<f64> = affine(&self.w2, &self.b2, &h1).iter().map(|v| v.tanh()).collect();
        affine(&self.w3, &self.b3, &h2)
    }
}

/// Blends conditional and unconditional branch outputs at scale `omega`.
/// The endpoints return the branch outputs untouched.
fn guide(cond: &[f64], uncond: &[f64], omega: f64) -> Vec<f64> {
    if omega == 1.0 {
        cond.to_vec()
    } else if omega == 0.0 {
        uncond.to_vec()
    } else {
        cond.iter().zip(uncond).map(|(c, u)| u + omega * (c - u)).collect()
    }
}

/// Guided per-view noise estimates. Both branches are always evaluated, so a
/// call costs one prediction per view per guidance branch.
pub fn predict_noise(
    params: &DenoiserParams,
    xs: &[Vec<f64>],
    t: usize,
    prompt: usize,
    views: &[usize],
    omega: f64,
) -> Result<Vec<Vec<f64>>, ModelError> {
    params.check_t(t)?;
    params.check_ids(prompt, views)?;
    if !(omega >= 0.0) {
        return Err(ModelError::InvalidOmega(omega));
    }
    if xs.len() != views.len() {
        return Err(ModelError::DimMismatch { expected: views.len(), got: xs.len() });
    }
    let ctx = context_for(views, xs);
    let mut out = Vec::with_capacity(views.len());
    for (x, &view) in xs.iter().zip(views) {
        if x.len() != params.latent_dim {
            return Err(ModelError::DimMismatch { expected: params.latent_dim, got: x.len() });
        }
        let cond = params.eps_branch_plain(x, Some(prompt), Some(view), t, &ctx);
        let uncond = params.eps_branch_plain(x, None, None, t, &ctx);
        out.push(guide(&cond, &uncond, omega));
    }
    Ok(out)
}

/// Mean of all views' current latents.
pub fn context_mean(xs: &[Vec<f64>]) -> Vec<f64> {
    let dim = xs[0].len();
    let mut ctx = vec![0.0; dim];
    for x in xs {
        for (c, xi) in ctx.iter_mut().zip(x) {
            *c += xi;
        }
    }
    for c in &mut ctx {
        *c /= xs.len() as f64;
    }
    ctx
}

/// Context feature summed in increasing view-id order, making the value
/// independent of how the (view, latent) pairs are listed.
pub fn context_for(views: &[usize], xs: &[Vec<f64>]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by_key(|&i| views[i]);
    let dim = xs[0].len();
    let mut ctx = vec![0.0; dim];
    for &i in &order {
        for (c, xi) in ctx.iter_mut().zip(&xs[i]) {
            *c += xi;
        }
    }
    for c in &mut ctx {
        *c /= xs.len() as f64;
    }
    ctx
}

/// Ancestral mean for one view: (x - beta_t/sqrt(1-abar_t) * eps) / sqrt(alpha_t).
pub fn ancestral_mean(schedule: &NoiseSchedule, x: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
    let beta = schedule.beta_at(t);
    let coef = beta / (1.0 - schedule.alpha_bar_at(t)).sqrt();
    let inv = 1.0 / (1.0 - beta).sqrt();
    x.iter().zip(eps).map(|(xi, ei)| (xi - coef * ei) * inv).collect()
}

/// The denoiser inserted into a [`Tape`], either as parameter nodes (the
/// policy being differentiated) or as constant leaves (a frozen snapshot).
pub struct BoundDenoiser<'a> {
    params: &'a DenoiserParams,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    w3: NodeId,
    b3: NodeId,
    prompt: usize,
    prompt_node: NodeId,
    view_nodes: BTreeMap<usize, NodeId>,
    zero_embed: NodeId,
    names: BTreeMap<String, NodeId>,
}

impl<'a> BoundDenoiser<'a> {
    /// Inserts the arrays needed for `prompt` and `views` into the tape.
    pub fn bind(
        tape: &mut Tape,
        params: &'a DenoiserParams,
        prompt: usize,
        views: &[usize],
        as_params: bool,
    ) -> Result<Self, ModelError> {
        params.check_ids(prompt, views)?;
        let mut names = BTreeMap::new();
        let mut insert = |tape: &mut Tape, name: String, value: DenseArray| -> NodeId {
            let id = if as_params { tape.param(value) } else { tape.leaf(value) };
            names.insert(name, id);
            id
        };
        let w1 = insert(tape, "net.w1".into(), params.w1.clone());
        let b1 = insert(tape, "net.b1".into(), params.b1.clone());
        let w2 = insert(tape, "net.w2".into(), params.w2.clone());
        let b2 = insert(tape, "net.b2".into(), params.b2.clone());
        let w3 = insert(tape, "net.w3".into(), params.w3.clone());
        let b3 = insert(tape, "net.b3".into(), params.b3.clone());
        let prompt_node =
            insert(tape, format!("embed.prompt.{prompt}"), params.prompt_embed[prompt].clone());
        let mut view_nodes = BTreeMap::new();
        for &v in views {
            let id = insert(tape, format!("embed.view.{v}"), params.view_embed[v].clone());
            view_nodes.insert(v, id);
        }
        let zero_embed = tape.leaf(DenseArray::zeros(&[EMBED_DIM]));
        Ok(Self {
            params,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            prompt,
            prompt_node,
            view_nodes,
            zero_embed,
            names,
        })
    }

    pub fn prompt(&self) -> usize {
        self.prompt
    }

    fn eps_branch(
        &self,
        tape: &mut Tape,
        x: NodeId,
        view: Option<usize>,
        t: usize,
        ctx: NodeId,
    ) -> Result<NodeId, ModelError> {
        let (p_node, v_node) = match view {
            Some(v) => (
                self.prompt_node,
                *self.view_nodes.get(&v).ok_or(ModelError::UnknownView(v))?,
            ),
            None => (self.zero_embed, self.zero_embed),
        };
        let mut onehot = vec![0.0; self.params.time_steps];
        onehot[t - 1] = 1.0;
        let t_node = tape.leaf(DenseArray::vector(&onehot));
        let input = tape.concat(&[x, p_node, v_node, t_node, ctx])?;
        let h1 = tape.affine(self.w1, input, self.b1)?;
        let h1 = tape.tanh(h1);
        let h2 = tape.affine(self.w2, h1, self.b2)?;
        let h2 = tape.tanh(h2);
        Ok(tape.affine(self.w3, h2, self.b3)?)
    }

    /// Guided noise estimate node for one view.
    pub fn eps(
        &self,
        tape: &mut Tape,
        x: NodeId,
        view: usize,
        t: usize,
        ctx: NodeId,
        omega: f64,
    ) -> Result<NodeId, ModelError> {
        self.params.check_t(t)?;
        let cond = self.eps_branch(tape, x, Some(view), t, ctx)?;
        let uncond = self.eps_branch(tape, x, None, t, ctx)?;
        if omega == 1.0 {
            Ok(cond)
        } else if omega == 0.0 {
            Ok(uncond)
        } else {
            let gap = tape.sub(cond, uncond)?;
            let scaled = tape.scale(gap, omega);
            Ok(tape.add(uncond, scaled)?)
        }
    }

    /// Ancestral mean node for one view at timestep `t`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_mean(
        &self,
        tape: &mut Tape,
        schedule: &NoiseSchedule,
        x: NodeId,
        view: usize,
        t: usize,
        ctx: NodeId,
        omega: f64,
    ) -> Result<NodeId, ModelError> {
        let eps = self.eps(tape, x, view, t, ctx, omega)?;
        let beta = schedule.beta_at(t);
        let coef = beta / (1.0 - schedule.alpha_bar_at(t)).sqrt();
        let inv = 1.0 / (1.0 - beta).sqrt();
        let scaled_eps = tape.scale(eps, coef);
        let centered = tape.sub(x, scaled_eps)?;
        Ok(tape.scale(centered, inv))
    }

    /// Per-view log-density node of a stored transition; t = 1 is excluded.
    #[allow(clippy::too_many_arguments)]
    pub fn step_log_prob(
        &self,
        tape: &mut Tape,
        schedule: &NoiseSchedule,
        x_prev: NodeId,
        x_t: NodeId,
        view: usize,
        t: usize,
        ctx: NodeId,
        omega: f64,
    ) -> Result<NodeId, ModelError> {
        if t == 1 {
            return Err(ModelError::ExcludedStep);
        }
        self.params.check_t(t)?;
        let mean = self.step_mean(tape, schedule, x_t, view, t, ctx, omega)?;
        Ok(tape.gaussian_log_density(x_prev, mean, schedule.sigma_at(t))?)
    }

    /// Translates a tape gradient map into named parameter gradients.
    pub fn named_grads(&self, grads: &GradientMap) -> BTreeMap<String, DenseArray> {
        self.names
            .iter()
            .filter_map(|(name, id)| grads.get(*id).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}
