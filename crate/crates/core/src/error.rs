use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Variants map one-to-one onto the failure classes the command line reports
/// through distinct exit codes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// A file does not follow its on-disk layout.
    #[error("format error: {0}")]
    Format(String),
    /// Well-formed input whose content violates an invariant.
    #[error("data error: {0}")]
    Data(String),
    /// Invalid parameters or configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Tensor or array shapes that do not agree.
    #[error("shape error: {0}")]
    Shape(String),
    /// An operation called in a state that does not support it.
    #[error("state error: {0}")]
    State(String),
    /// A NaN or infinity appeared during computation.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::State(_) => 1,
            Error::Format(_) | Error::Data(_) | Error::Shape(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
