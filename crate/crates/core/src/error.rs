use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("value outside quantizer range: {0}")]
    Range(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A stated assumption of a bound evaluator does not hold; the message
    /// names the violated assumption.
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("training diverged at epoch {epoch} with learning rate {lr}")]
    Diverged { epoch: usize, lr: f64 },
}
