use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, XaiError>;

/// Every failure the library can report. The CLI maps the variants onto
/// process exit codes, see [`XaiError::exit_code`].
#[derive(Debug, Error)]
pub enum XaiError {
    #[error("dimension error in {layer}: {detail}")]
    Dimension { layer: String, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("training diverged in epoch {epoch} (lr = {lr})")]
    TrainingDiverged { epoch: usize, lr: f64 },

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl XaiError {
    pub(crate) fn dim(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        XaiError::Dimension {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        XaiError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            XaiError::Argument(_) | XaiError::Budget(_) | XaiError::Index { .. } => 2,
            XaiError::Format { .. } | XaiError::Io { .. } => 3,
            XaiError::Capability(_) => 4,
            _ => 1,
        }
    }
}
