use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("item id {id} out of range (vocabulary size {vocab})")]
    ItemOutOfRange { id: u32, vocab: usize },

    #[error("cannot build a window from an empty item list")]
    EmptySequence,

    #[error("no recorded forward pass to differentiate")]
    NoRecordedForward,

    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("target item {0} is not a catalog item")]
    MissingTarget(u32),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
