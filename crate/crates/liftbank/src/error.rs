use liftbank_core::Error as CoreError;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A property or metric check failed (exit 1).
    #[error("{0}")]
    Failure(String),
    /// Bad usage, configuration, or unreadable input (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Training produced a non-finite loss or gradient (exit 3).
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Failure(m) | CliError::Usage(m) | CliError::Diverged(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Diverged { .. }
            | CoreError::NonFiniteGradient(_)
            | CoreError::NonFiniteObjective => CliError::Diverged(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}
