use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed arguments that violate an operation's preconditions.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data is unusable (empty, non-finite, wrong label values, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Gradient descent produced a non-finite loss.
    #[error("training diverged after epoch {epoch} (last finite loss {last_finite_loss})")]
    Divergence { epoch: usize, last_finite_loss: f64 },

    #[error("evolution failed at generation {generation}, individual {individual}: {source}")]
    Evolution {
        generation: usize,
        individual: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("level `{level}` failed: {source}")]
    Level {
        level: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than by the program.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Data(_) | Error::Parse { .. } | Error::Format(_) | Error::Io { .. } => true,
            Error::Level { source, .. } | Error::Evolution { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
