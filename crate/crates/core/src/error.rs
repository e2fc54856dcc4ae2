use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("softmax row {0} has no valid positions")]
    FullyMasked(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid token id {0}")]
    InvalidToken(u32),

    #[error("vocabulary target size {target} is below the minimum {min}")]
    VocabTooSmall { target: usize, min: usize },

    #[error("{words} words but {labels} labels")]
    LengthMismatch { words: usize, labels: usize },

    #[error("invalid label registry: {0}")]
    Registry(String),

    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("step {step} is outside the plan (total {total})")]
    StepOutOfRange { step: usize, total: usize },

    #[error("sequence length {len} is outside [{min}, {max}]")]
    SequenceLength { len: usize, min: usize, max: usize },

    #[error("model has no {0} head")]
    MissingHead(&'static str),

    #[error("{0} requires bidirectional attention")]
    NotBidirectional(&'static str),

    #[error("{what} hash mismatch: checkpoint has {expected}, got {found}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },

    #[error("phase {0} has no languages with data")]
    EmptyPool(usize),

    #[error("prediction has {predicted} positions, reference has {reference}")]
    Alignment { reference: usize, predicted: usize },

    #[error("invalid synthetic language spec: {0}")]
    Synth(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}
