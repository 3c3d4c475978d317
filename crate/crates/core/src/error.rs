use std::path::PathBuf;

use genrenet_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("cannot read audio {path}: {detail}")]
    UnreadableAudio { path: String, detail: String },

    #[error("unsupported audio encoding in {path}: {detail}")]
    UnsupportedEncoding { path: String, detail: String },

    #[error("audio {0} contains no samples")]
    EmptyAudio(String),

    #[error("audio shorter than {needed_seconds} seconds")]
    AudioTooShort { needed_seconds: f64, samples: usize, needed: usize },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("unknown genre directory {0:?}")]
    UnknownGenre(String),

    #[error("cannot parse file name {0:?} as <genre>.<number>.*")]
    BadFileName(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite logits")]
    NonFiniteLogits,

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Nn(#[from] NnError),
}

impl CoreError {
    /// Short category used for command-line and HTTP error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            CoreError::UnreadableAudio { .. }
            | CoreError::UnsupportedEncoding { .. }
            | CoreError::EmptyAudio(_)
            | CoreError::AudioTooShort { .. } => "audio",
            CoreError::InvalidArgument { .. } | CoreError::Shape { .. } => "argument",
            CoreError::UnknownGenre(_) | CoreError::BadFileName(_) => "dataset",
            CoreError::Format { .. } => "format",
            CoreError::NonFiniteLoss { .. } | CoreError::NonFiniteLogits => "numeric",
            CoreError::EmptyCatalog => "catalog",
            CoreError::Io { .. } => "io",
            CoreError::Nn(NnError::Mismatch(_)) | CoreError::Nn(NnError::Format(_)) => "checkpoint",
            CoreError::Nn(_) => "model",
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn arg_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(CoreError::InvalidArgument { op, detail: detail.into() })
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}
