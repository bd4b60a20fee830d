use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Symmetric positive-definite factorization failed even after jitter.
    #[error("numerical failure: factorization of {size}x{size} system failed{}", lambda_suffix(.lambda))]
    NumericalFailure { size: usize, lambda: Option<f64> },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn lambda_suffix(lambda: &Option<f64>) -> String {
    match lambda {
        Some(l) => format!(" (lambda = {l:e})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::Io { .. } => 2,
            Error::NumericalFailure { .. } => 3,
            Error::InvalidState(_) => 1,
        }
    }
}
