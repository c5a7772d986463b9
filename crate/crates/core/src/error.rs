use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported camera model `{0}` (only PINHOLE and SIMPLE_PINHOLE are accepted)")]
    UnsupportedModel(String),

    #[error("missing asset `{0}`")]
    MissingAsset(String),

    #[error("transport error: {0}")]
    Transport(String),

    /// The model answered, but not with something we could parse even after the repair retry.
    #[error("unparseable model response: {message}")]
    Response { message: String, raw: String },

    #[error("degenerate view: {0}")]
    DegenerateView(String),

    #[error("degenerate object: {0}")]
    DegenerateObject(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure came from the environment (files, network) rather than from the data.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Transport(_) | Error::MissingAsset(_)
        )
    }
}
