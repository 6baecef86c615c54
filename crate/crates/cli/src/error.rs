use thiserror::Error;

/// Failures of a CLI run, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or unreadable input: exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// Numerical or I/O failure during a valid run: exit code 1.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ensemble_minimax::Error> for CliError {
    fn from(e: ensemble_minimax::Error) -> Self {
        use ensemble_minimax::Error as E;
        match e {
            E::Config(_) | E::Dimension(_) | E::Precondition(_) | E::UnsupportedDimension(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
