use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
///
/// Every variant maps onto one of the diagnostic categories reported by the
/// command-line driver (config, input, training, attack, numeric), plus I/O
/// and geometry failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("training error at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("attack error at step {step}: {message}")]
    Attack { step: usize, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("generation {generation}: {source}")]
    Generation {
        generation: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name used for command-line diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Input(_) | Error::Parse { .. } | Error::Io { .. } => "input",
            Error::Training { .. } => "training",
            Error::Attack { .. } => "attack",
            Error::Numeric(_) => "numeric",
            Error::Geometry(_) => "input",
            Error::UnsupportedMetric(_) => "input",
            Error::Generation { source, .. } => source.category(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
