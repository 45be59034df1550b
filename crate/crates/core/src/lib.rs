//! A desk-scale laboratory for RL finetuning of a few-step text-to-multiview
//! diffusion model.
//!
//! The pieces: a toy conditional Gaussian diffusion model over 2-D scene
//! points ([`model`], [`schedule`], [`sampling`]), zigzag self-refinement
//! sampling ([`zigzag`]), a synthetic scene environment with analytic
//! fidelity and consistency rewards ([`scene`]), the full family of policy
//! objectives ([`objectives`]), a Lagrangian primal-dual constraint
//! controller ([`controller`]), and a deterministic training harness
//! ([`trainer`]) with checkpointing ([`checkpoint`]) and CSV metrics
//! ([`metrics`]). Gradients come from a small reverse-mode tape ([`tape`]).

// negated float comparisons like `!(x > 0.0)` are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod metrics;
pub mod model;
pub mod normalizer;
pub mod objectives;
pub mod optimizer;
pub mod pretrain;
pub mod sampling;
pub mod scene;
pub mod schedule;
pub mod seeds;
pub mod tape;
pub mod trainer;
pub mod zigzag;
