use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite values produced by {0}")]
    NonFinite(&'static str),

    #[error("backward called on {0} without a cached forward pass")]
    NoForwardCache(&'static str),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint does not match model: {}", .0.join("; "))]
    Mismatch(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(NnError::Shape { op, detail: detail.into() })
}

pub(crate) fn arg_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(NnError::InvalidArgument { op, detail: detail.into() })
}
