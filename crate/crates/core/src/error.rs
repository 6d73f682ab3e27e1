use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    Shape { shape: Vec<usize>, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range for vocabulary of {vocab} at position {position}")]
    Lookup {
        index: usize,
        vocab: usize,
        position: usize,
    },

    #[error("empty reduction: slice {slice} has valid length 0")]
    EmptyReduction { slice: usize },

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
