//! Core library for `senti`, a reproducible experiment pipeline for
//! 3-class sentiment classification (Negative / Neutral / Positive).
//!
//! The pipeline covers the full experiment lifecycle at desk scale:
//!
//! - [`corpus`] — loading, validating, deduplicating, and label-mapping
//!   datasets (task splits and external corpora) into a canonical form.
//! - [`textprep`] — URL/username tagging, pluggable normalization, and
//!   tokenization with truncation.
//! - [`augment`] — random token drop applied on the fly during training,
//!   MLM masking for task-adaptive pre-training, and a paraphraser contract.
//! - [`backend`] — the pluggable model contract plus a deterministic toy
//!   classifier so everything runs on one CPU core.
//! - [`training`] — run orchestration: fine-tuning, 2-stage fine-tuning,
//!   TAPT, and seed sweeps, all persisted as run records.
//! - [`ensemble`] — majority voting with best-model tie-breaking.
//! - [`metrics`] — micro-F1, confusion matrices, per-class recall, and
//!   report emission.
//! - [`config`] — the flat key/value run-configuration file format.
//!
//! Every operation is deterministic given its configuration and inputs;
//! randomness is always derived from explicit `(seed, epoch, example)` keys.

pub mod augment;
pub mod backend;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod textprep;
pub mod training;

pub use error::{Error, Result};
