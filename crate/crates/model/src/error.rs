use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds the window of {window}")]
    Window { len: usize, window: usize },
    #[error("token {token} outside vocabulary of {vocab}")]
    Vocab { token: u32, vocab: usize },
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("empty token sequence")]
    EmptySequence,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] patchgen::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
