use std::path::PathBuf;

/// Errors produced by the lab.
///
/// Variants split into two groups: input validation (bad arguments, bad
/// configs, precondition violations) and runtime failures (I/O, training
/// divergence). [`Error::is_validation`] tells them apart.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no embedding for algorithm {0}: adaptive features exist only for training algorithms")]
    NoEmbedding(u32),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidDistribution(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::Precondition(_)
            | Error::NoEmbedding(_)
            | Error::Parse(_)
            | Error::Json(_) => true,
            Error::Cell { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
