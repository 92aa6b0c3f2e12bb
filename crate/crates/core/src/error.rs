use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown node label `{0}`")]
    UnknownLabel(String),

    #[error("edge references undeclared node `{0}`")]
    DanglingEndpoint(String),

    #[error("node `{0}` is not in the graph")]
    UnknownNode(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("invalid target set: {0}")]
    InvalidTargets(String),

    #[error("no valid corruption for edge ({src}, {relation}, {dst}) after {attempts} attempts")]
    NegativeSaturation {
        src: usize,
        relation: usize,
        dst: usize,
        attempts: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("gradient tape has already been consumed by a backward pass")]
    TapeConsumed,

    #[error("loss builder is not deterministic: two forward passes gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): loss = {loss}")]
    Diverged {
        epoch: usize,
        learning_rate: f64,
        loss: f64,
    },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bookkeeping invariant violated: {0}")]
    Bookkeeping(String),

    #[error("unknown acquisition strategy `{0}`")]
    UnknownStrategy(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
