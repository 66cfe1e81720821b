use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A NaN or infinity appeared in a forward value or a gradient.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {}: {detail}", path.display())]
    Image { path: PathBuf, detail: String },

    #[error("annotation parse error in <{element}>: {detail}")]
    Annotation { element: String, detail: String },

    #[error("checkpoint format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training aborted at step {step}: {source}")]
    Training {
        step: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
