use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value in {layer}")]
    Numerical { layer: String },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: duplicate coordinate ({x}, {y})")]
    DuplicateCoordinate { line: u64, x: u32, y: u32 },
    #[error("line {line}: labels must be positive integers, got ({l1}, {l2})")]
    InvalidLabel { line: u64, l1: i64, l2: i64 },
    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(String),
    #[error("annotated pixel ({x}, {y}) outside {width}x{height} prediction")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: usize,
        height: usize,
    },
    #[error("no crop of size >= {min_size} keeps text below {max_ratio}")]
    NoCleanCrop { min_size: usize, max_ratio: f64 },
    #[error("unsupported input: {0}")]
    UnsupportedInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Tensor(#[from] autograd::TensorError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
