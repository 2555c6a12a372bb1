use thiserror::Error;

/// Exit status for success.
pub const EXIT_OK: u8 = 0;
/// Bad configuration, invalid input matrix, or incompatible request.
pub const EXIT_VALIDATION: u8 = 1;
/// A verification suite reported a failed check.
pub const EXIT_SUITE_FAILED: u8 = 2;
/// I/O or numerical failure while running.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin}: {message}")]
    Config { origin: String, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Validation(String),

    #[error("verification failed: {0}")]
    SuiteFailed(String),

    #[error(transparent)]
    Core(#[from] dissom::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use dissom::Error as E;
        match self {
            CliError::Config { .. } | CliError::Usage(_) | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::SuiteFailed(_) => EXIT_SUITE_FAILED,
            CliError::Io(_) | CliError::Json(_) => EXIT_RUNTIME,
            CliError::Core(e) => match e {
                E::Io(_) | E::Csv(_) | E::Json(_) | E::NoConvergence { .. } | E::DegenerateColumn { .. } => {
                    EXIT_RUNTIME
                }
                _ => EXIT_VALIDATION,
            },
        }
    }
}
