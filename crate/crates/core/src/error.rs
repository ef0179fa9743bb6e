use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid blur scale {0}: must be in (0, 1]")]
    InvalidScale(f64),
    #[error("coordinate ({x}, {y}) outside {size}x{size} image")]
    OutOfRange { x: f64, y: f64, size: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("requested {requested} fixations but the grid only has {capacity} patches")]
    Capacity { requested: usize, capacity: usize },
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("png error: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }
}
