use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("tape does not belong to this network state (tape version {tape}, net version {net})")]
    StaleTape { tape: u64, net: u64 },
    #[error("{what} {value} out of range 0..{limit}")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("degenerate policy: sigma must lie in (0, 1), got {0}")]
    DegeneratePolicy(f64),
    #[error("cannot normalize an all-zero symbol batch")]
    ZeroEnergy,
    #[error("pilot erasure: channel estimate magnitude {0:e} below 1e-9")]
    Erasure(f64),
    #[error("channel {0} does not expose a Jacobian; model-aware training needs a differentiable channel")]
    MissingJacobian(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for this error class: config 2, numeric 3, I/O 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Io { .. } | Error::Parse { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
