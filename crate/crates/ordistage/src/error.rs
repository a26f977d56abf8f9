//! Crate-wide error type.

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The CLI maps these onto process exit codes: config errors exit 2,
/// data errors exit 3, numeric failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dim(String),

    /// A parameter outside its documented range.
    #[error("parameter error: {0}")]
    Param(String),

    /// Input values outside the operation's domain (e.g. pixels not in [0,1]).
    #[error("input error: {0}")]
    Input(String),

    /// An API contract was violated (non-scalar loss, same-stage negative, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Non-finite values or a numeric procedure that failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A stage x sex cell too small to stratify.
    #[error("stratification error: {0}")]
    Stratification(String),

    /// Malformed or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Missing or malformed dataset / run-directory contents.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Param(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Stratification(_) | Error::Input(_) => 3,
            Error::Numeric(_) | Error::Dim(_) | Error::Contract(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
