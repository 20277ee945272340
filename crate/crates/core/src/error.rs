use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate slice: admission {0} has neither propositions nor codes")]
    DegenerateSlice(usize),

    #[error("trajectory error: {0}")]
    Trajectory(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("extractor error: {0}")]
    Extractor(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by the command-line front end for exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parameter(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::EmptyInput(_)
            | Error::Checkpoint(_) => ErrorKind::Data,
            _ => ErrorKind::Runtime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
