use mixed_em_core::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Numerical breakdown or an output write failure.
    pub const RUNTIME: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const NOT_CONVERGED: u8 = 3;
    pub const VALIDATION_FAIL: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(CoreError::NumericalFailure(_)) | CliError::Io(_) => exit::RUNTIME,
            _ => exit::INPUT,
        }
    }
}
