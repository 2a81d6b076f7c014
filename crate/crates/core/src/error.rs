use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("vector has zero Euclidean norm")]
    DegenerateVector,

    #[error("parameter vector contains a non-finite value at index {0}")]
    NonFinite(usize),

    #[error("parameter vector must not be empty")]
    EmptyVector,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid layer layout: {0}")]
    Layout(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("IDX format error: {0}")]
    Format(String),

    #[error("cannot aggregate an empty set of updates")]
    EmptyAggregation,

    #[error("Krum needs at least 3 clients, got {0}")]
    InsufficientClients(usize),

    #[error("defense removed every client update in round {0}")]
    AllRemoved(usize),

    #[error("value out of fixed-point range: {0}")]
    Range(String),

    #[error("prover inconsistency: {0}")]
    ProverInconsistency(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("transcript error: {0}")]
    Transcript(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
