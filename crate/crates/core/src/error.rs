use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("empty mask: ground truth has no valid pixels")]
    EmptyMask,
    #[error("source error: {0}")]
    Source(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
