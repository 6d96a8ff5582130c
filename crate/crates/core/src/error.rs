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

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label spaces differ: {left} vs {right} entries")]
    LabelSpaceMismatch { left: usize, right: usize },

    #[error("divergence undefined: reference has mass {mass} on a label the target assigns zero (alpha = 0)")]
    UndefinedDivergence { mass: f64 },

    #[error("unknown article `{0}`")]
    UnknownArticle(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("duplicate candidate `{0}`")]
    DuplicateCandidate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("article `{0}` has no embedding")]
    MissingEmbedding(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("llm client error: {0}")]
    Llm(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
