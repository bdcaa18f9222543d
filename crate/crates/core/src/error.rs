//! Error type shared across the pipeline.

use thiserror::Error;

/// Unified error type for all pipeline operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input row, header, or label value.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// An example id appeared twice within one dataset.
    #[error("duplicate id `{id}` in {path} at line {line}")]
    DuplicateId {
        id: String,
        path: String,
        line: usize,
    },

    /// An external label with no entry in the active label mapping.
    #[error("unknown external label `{label}` for example `{id}` (row {row})")]
    UnknownLabel {
        label: String,
        id: String,
        row: usize,
    },

    /// Invalid configuration value(s). One message per offending field.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// A pluggable normalizer failed.
    #[error("normalization failed: {0}")]
    Normalization(String),

    /// Text with no content tokens after preprocessing.
    #[error("no content tokens survive encoding{}", .id.as_ref().map(|i| format!(" for example `{i}`")).unwrap_or_default())]
    EmptyText { id: Option<String> },

    /// Training or pre-training was handed an empty dataset.
    #[error("dataset is empty")]
    EmptyDataset,

    /// Model handle and encoded data disagree on vocabulary size.
    #[error("vocab mismatch: model expects {model}, data encoded with {data}")]
    VocabMismatch { model: u32, data: u32 },

    /// Backend does not implement the requested capability.
    #[error("backend `{backend}` does not support {capability}")]
    Capability {
        backend: String,
        capability: String,
    },

    /// An external example's text matches a held-out split verbatim.
    #[error("leakage: external example `{id}` matches a text in the `{split}` split")]
    Leakage { id: String, split: String },

    /// Prediction inputs whose lengths or ids do not line up.
    #[error("misaligned predictions: {0}")]
    MisalignedPredictions(String),

    /// Metric requested over a confusion matrix with zero total count.
    #[error("confusion matrix is empty")]
    EmptyMatrix,

    /// Serialized model failed its integrity checks.
    #[error("model file {path} is corrupt: {message}")]
    Integrity { path: String, message: String },

    /// A paraphraser plugin failed; carries the offending example id.
    #[error("paraphraser failed on example `{id}`: {message}")]
    Paraphrase { id: String, message: String },

    /// A seed-sweep run failed part-way through.
    #[error("seed {seed} failed after {completed} completed run(s): {source}")]
    SweepSeed {
        seed: u64,
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Single-field configuration error.
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(vec![message.into()])
    }

    /// Io error annotated with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
