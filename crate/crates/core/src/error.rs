//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty caption corpus")]
    EmptyCorpus,

    #[error("empty patch set")]
    EmptyPatchSet,

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid caption: {0}")]
    InvalidCaption(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("dataset record {index}: {reason}")]
    DatasetRecord { index: usize, reason: String },

    #[error("no supervised tokens")]
    NoSupervisedTokens,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty caption list")]
    EmptyVote,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
