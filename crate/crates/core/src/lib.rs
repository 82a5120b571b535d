//! Knowledge distillation for training on pruned data.
//!
//! The crate is organised by subsystem:
//!
//! - [`theory`]: ridge regression, the self-distillation student estimator on a
//!   pruned design, its closed-form bias, a Monte-Carlo cross-check and the
//!   singular-value dominance of column subsets.
//! - [`data`]: synthetic Gaussian-mixture and linear-regression generators,
//!   label-noise injection and the CSV dataset format.
//! - [`nn`]: a small dense classifier with hand-derived gradients, the
//!   temperature softmax, the combined KD loss and an SGD training loop.
//! - [`pruning`]: EL2N, GraNd and forgetting scores, top-k and class-balanced
//!   random selection.
//! - [`distill`]: teacher logit caches, the pruning-fraction-aware KD weight
//!   and student training on pruned subsets.
//! - [`harness`]: experiment specs, the artifact store, end-to-end pipelines,
//!   the theory suite and report emission.

pub mod data;
pub mod digest;
pub mod distill;
pub mod error;
pub mod harness;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
