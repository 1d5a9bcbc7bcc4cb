use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input was not well-formed JSON.
    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    Json {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    /// JSON was well-formed but did not follow the expected schema.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    /// A binary or tabular file did not follow its declared layout.
    #[error("format error{}: {message}", record.map(|r| format!(" at record {r}")).unwrap_or_default())]
    Format {
        record: Option<usize>,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs are individually valid but inconsistent with each other.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(record: Option<usize>, message: impl Into<String>) -> Self {
        Error::Format {
            record,
            message: message.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
