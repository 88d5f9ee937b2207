//! A desk-scale laboratory for simultaneous (streaming) sequence-to-sequence
//! translation.
//!
//! The crate bundles everything needed to study quality/latency trade-offs of
//! streaming translation on a single CPU core:
//!
//! - [`ndgrad`]: a small f64 tensor library with reverse-mode automatic
//!   differentiation, sized for gradient-checkable transformers.
//! - [`model`]: an encoder-decoder transformer with a unidirectional encoder,
//!   prefix-restricted cross-attention, and per-layer adapter banks routed by
//!   lagging value.
//! - [`policy`]: READ/WRITE decision engines — the fixed wait-k schedule, the
//!   multi-path training sampler, and an uncertainty-threshold adaptive policy.
//! - [`metrics`]: exact latency metrics (AL, CW, AP, DAL) over delay
//!   schedules, plus corpus BLEU and token accuracy.
//! - [`corpus`]: vocabularies, TSV corpora, batching, and synthetic
//!   transduction tasks with analytically known latency requirements.
//! - [`trainer`]: a deterministic Adam training loop with multi-path lagging
//!   sampling and frozen-backbone adapter fine-tuning.
//! - [`eval`]: corpus-level decoding drivers that produce trade-off rows.
//!
//! See the `book/` guide at the repository root for worked examples.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod ndgrad;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
pub use ndgrad::Tensor;
