use acc_core::AccError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },

    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),

    /// Model or partition construction rejected the configured values.
    #[error("config error: {0}")]
    Setup(AccError),

    #[error("solver failure ({method}, N = {atoms}): {source}")]
    Solver { method: String, atoms: usize, source: AccError },

    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Setup(_) => 2,
            RunError::Solver { .. } => 3,
            RunError::Io(_) => 1,
        }
    }
}
