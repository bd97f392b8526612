use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform for an operation.
    #[error("{op}: {details}")]
    Shape { op: &'static str, details: String },

    /// An argument is outside the operation's domain.
    #[error("{op}: {details}")]
    Invalid { op: &'static str, details: String },

    /// A forward value, loss, or check target is NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Training produced a non-finite loss and was aborted.
    #[error("non-finite loss at epoch {epoch}, inner step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    /// A text file (trajectory CSV, checkpoint) failed to parse.
    #[error("{path}:{line}: {details}")]
    Parse {
        path: String,
        line: usize,
        details: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }

    pub fn invalid(op: &'static str, details: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            details: details.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
