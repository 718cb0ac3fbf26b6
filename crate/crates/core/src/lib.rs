//! Data-curation and training-stability toolkit for language-model pretraining.
//!
//! The crate is organised around the stages of a pretraining run:
//!
//! - [`corpus`]: repeated n-gram detection (document filtering and loss
//!   masking), word-frequency heuristics and n-gram decontamination.
//! - [`mixture`]: multi-source mixture budgets, micro-anneal mixes and a
//!   seeded, reproducible interleaving sampler.
//! - [`schedule`]: warmup, cosine-with-floor, truncation and linear anneal
//!   learning-rate schedules.
//! - [`model`]: a small reference transformer (reordered RMSNorm, QK-norm,
//!   RoPE, GQA, SwiGLU, z-loss) on a reverse-mode tape, with both
//!   initialization schemes, AdamW, checkpoint souping and a toy trainer.
//! - [`diagnostics`]: spike score, growth exponent, width-scaling
//!   correlation, FLOPs and energy-footprint calculators.

pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod mixture;
pub mod model;
pub mod schedule;

pub use error::{ForgeError, Result};
