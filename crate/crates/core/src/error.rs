use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },

    #[error("vocabulary has no {0}")]
    EmptyVocabulary(&'static str),

    #[error("invalid {kind} name `{name}`: names must be nonempty and contain no whitespace")]
    InvalidName { kind: &'static str, name: String },

    #[error("unknown label: {0}")]
    UnknownLabel(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("backward observation length {n_obs_bwd} must lie in 1..={max}")]
    InvalidBackwardSplit { n_obs_bwd: usize, max: usize },

    #[error("sequence of {len} tokens exceeds context length {context_len}")]
    ContextOverflow { len: usize, context_len: usize },

    #[error("grammar violation at position {position}: {detail}")]
    GrammarViolation { position: usize, detail: String },

    #[error("output ended before EOS after {0} tokens")]
    TruncatedOutput(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NumericalDivergence { epoch: usize, batch: usize },

    #[error("mask admits no token")]
    EmptySupport,

    #[error("reference sequence is empty")]
    EmptyReference,

    #[error("no test instances")]
    EmptyTestSet,

    #[error("vocabulary too small: need {needed} distinct actions, have {available}")]
    InsufficientVocabulary { needed: usize, available: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
