use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Config,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported encoding: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("signal of {len} samples is shorter than one {frame_size}-sample frame")]
    EmptySpectrogram { len: usize, frame_size: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("adaptation failed: {0}")]
    Adaptation(String),
    #[error("degenerate signal: {0}")]
    Degenerate(String),
    #[error("delay is undefined for silent input")]
    UndefinedDelay,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::State(_) => ErrorKind::Config,
            Error::Divergence { .. } | Error::Adaptation(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
