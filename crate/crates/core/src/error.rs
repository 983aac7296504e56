//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: `Config` and
//! `Data` are validation failures (exit 1), everything else is a runtime or
//! numeric failure (exit 2).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad dimensions, out-of-range hyperparameters,
    /// unknown config keys, shape mismatches between layers.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid input data: malformed manifests, dangling pair references,
    /// out-of-range labels.
    #[error("data error: {0}")]
    Data(String),

    /// A numeric operation received an input it cannot handle, e.g. a
    /// zero-norm vector fed to a cosine similarity.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A non-finite value (NaN/Inf) showed up where the kernel guarantees
    /// finiteness, or an optimizer step diverged.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error per the CLI contract:
    /// 1 = validation error, 2 = runtime/numeric error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Data(_) => 1,
            Error::DegenerateInput(_) | Error::Numeric(_) | Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
