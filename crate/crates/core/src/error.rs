use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate user_id {user_id:?}")]
    DuplicateUser { line: usize, user_id: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("lexicon: {0}")]
    Lexicon(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("user {0} has no tweets")]
    NoTweets(String),

    #[error("topic model: {0}")]
    Topic(String),

    #[error("provider: {0}")]
    Provider(String),

    #[error("scaler has not been fitted")]
    ScalerNotFitted,

    #[error("user {0} is unlabeled")]
    Unlabeled(String),

    #[error("word vectors: {0}")]
    WordVectors(String),

    #[error(transparent)]
    Tensor(#[from] depnet_tensor::TensorError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
