use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading or validating the review corpus.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed row {row}: {message}")]
    MalformedRow {
        path: PathBuf,
        row: u64,
        message: String,
    },
    #[error("{path}: row {row}: rating {value:?} is not an integer in 1..=10")]
    BadRating {
        path: PathBuf,
        row: u64,
        value: String,
    },
    #[error("rating {0} is outside 1..=10")]
    RatingOutOfRange(i64),
    #[error("class code {0} is not one of 0, 1, 2")]
    BadClass(i64),
    #[error("sampling fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Errors from the encoders: embedding tables and tokenizer assets.
#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Embedding {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("tokenizer assets: {0}")]
    Tokenizer(String),
}

/// Errors from model construction, inference, training and checkpoints.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint {id:?} could not be resolved (searched: {searched})")]
    CheckpointUnavailable { id: String, searched: String },
    #[error("{path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training: {0}")]
    Training(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors from metric computation and analysis.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class code {0} is not one of 0, 1, 2")]
    BadClass(i64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub(crate) fn io_err<E, P: Into<PathBuf>>(path: P) -> impl FnOnce(std::io::Error) -> E
where
    E: From<(PathBuf, std::io::Error)>,
{
    let path = path.into();
    move |source| E::from((path, source))
}

macro_rules! impl_from_io {
    ($($ty:ty),*) => {
        $(impl From<(PathBuf, std::io::Error)> for $ty {
            fn from((path, source): (PathBuf, std::io::Error)) -> Self {
                Self::Io { path, source }
            }
        })*
    };
}

impl_from_io!(DataError, EncodeError, ModelError, EvalError);
