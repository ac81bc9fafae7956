use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record does not match the expected schema. `record` is 1-based.
    #[error("schema error in record {record}: {message}")]
    Schema { record: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("filtering left no reports (min_count = {min_count})")]
    EmptyResult { min_count: usize },

    #[error("labels missing from relation table: {}", .0.join(", "))]
    MissingLabels(Vec<String>),

    #[error("no translation for label {0:?}")]
    MissingTranslation(String),

    #[error("backend error: {message}")]
    Backend {
        message: String,
        /// Protocol transcript lines or stderr output that help diagnose the failure.
        diagnostics: Vec<String>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An error annotated with the step that produced it.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("invalid TOML: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(record: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            record,
            message: message.into(),
        }
    }

    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error beneath any context annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn backend(message: impl Into<String>) -> Self {
        Error::Backend {
            message: message.into(),
            diagnostics: Vec::new(),
        }
    }
}
