use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or parameter does not have the extent an operation needs.
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("missing weight `{0}`")]
    MissingWeight(String),

    #[error("weight `{name}` has shape {actual:?}, architecture expects {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("unexpected weight `{0}` not used by the architecture")]
    UnexpectedWeight(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            op,
            axis,
            expected,
            actual,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
