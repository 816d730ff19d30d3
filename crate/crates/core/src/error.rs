use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AcaeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AcaeError {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("split file line {line}: {reason}")]
    SplitFormat { line: usize, reason: String },

    #[error(
        "{stage} diverged at epoch {epoch}: loss is {loss} (learning rate {learning_rate})"
    )]
    Divergence {
        stage: &'static str,
        epoch: usize,
        loss: f64,
        learning_rate: f64,
    },
}

impl AcaeError {
    pub(crate) fn shape(
        op: &'static str,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        AcaeError::Shape {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AcaeError::Io {
            path: path.into(),
            source,
        }
    }
}
