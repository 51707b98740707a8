use thiserror::Error;

/// Failures surfaced by the command-line tool, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("verification failed at step {step}: rel_error {rel_error:e} > tol {tol:e}")]
    Verification { step: usize, rel_error: f64, tol: f64 },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: conystrom_core::Error,
    },
    #[error(transparent)]
    Core(#[from] conystrom_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
