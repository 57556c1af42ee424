use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("token out of range: id {id} with vocabulary size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("empty target")]
    EmptyTarget,
    #[error("probability saturated: avg log-prob {avg_logp} exceeds clamp {clamp}")]
    ProbabilitySaturated { avg_logp: f64, clamp: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(&'static str),
    #[error("non-finite loss at step {step} (batch {batch})")]
    NonFiniteLoss { step: usize, batch: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("need at least {need} items, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("zero-norm embedding")]
    ZeroEmbedding,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
