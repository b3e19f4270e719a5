use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] imagerag_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("metadata line {line}: {message}")]
    Metadata { line: usize, message: String },

    #[error("id \"{0}\" is missing from metadata")]
    MissingMetadata(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("unexpected response: {0}")]
    Protocol(String),

    #[error("backend reported failure: {0}")]
    Backend(String),

    #[error("unparseable yes/no answer: {raw:?}")]
    UnparseableDecision { raw: String },

    #[error("VLM returned no usable captions")]
    NoCaptions,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

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

    /// Errors caused by bad input files, flags or configuration rather than
    /// by a model or service.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Core(_)
                | Error::Io { .. }
                | Error::Metadata { .. }
                | Error::MissingMetadata(_)
                | Error::Precondition(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
