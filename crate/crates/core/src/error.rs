use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: vertex reference {index} out of range (mesh has {count} vertices)")]
    Index {
        path: PathBuf,
        line: usize,
        index: i64,
        count: usize,
    },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("empty mesh")]
    EmptyMesh,
    #[error("mesh has zero surface area")]
    ZeroArea,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("position {position:?} lies outside the patch frame")]
    OutOfFrame { position: [f64; 3] },
    #[error("patch order mismatch: {0}")]
    OrderMismatch(String),
    #[error("token file: {0}")]
    TokenFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("token source: {0}")]
    Source(String),
}
