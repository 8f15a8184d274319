use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the balancing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` is 1-based; `column` is the 1-based field index when known.
    #[error("parse error at line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        column: Option<usize>,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("generation failed: {0}")]
    Generation(String),

    /// A hold-out test split lost one of the two classes.
    #[error("repeat {repeat}: test split contains a single class")]
    DegenerateSplit { repeat: usize },

    #[error("repeat {repeat} failed: {source}")]
    Repeat {
        repeat: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("report error: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, column: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error, looking through [`Error::Repeat`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Repeat { source, .. } => source.root(),
            other => other,
        }
    }
}
