use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("non-finite loss {value} for sample {sample}")]
    NonFinite { sample: usize, value: f64 },

    #[error("non-finite value in {what}")]
    NonFiniteInput { what: &'static str },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("importance scores sum to zero; add smoothing")]
    DegenerateDistribution,

    #[error("pool position {position} has zero probability but k = {k} > 0")]
    ZeroProbability { position: usize, k: f64 },

    #[error("variance needs at least 2 samples, got {count}")]
    UndefinedVariance { count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("optimizer kind mismatch: expected {expected}")]
    OptimizerKind { expected: &'static str },

    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    Magic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated, need {needed} bytes but file has {actual}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        actual: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training aborted at iteration {iteration}: {source}")]
    Diverged {
        iteration: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            actual,
        })
    }
}
