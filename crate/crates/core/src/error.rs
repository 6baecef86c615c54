use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A non-finite state appeared while integrating.
    #[error("integration diverged in cell {cell}{}", theta_suffix(*.theta_index))]
    IntegrationDiverged {
        cell: usize,
        theta_index: Option<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A user-supplied evaluator broke one of its standing assumptions.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("running cost has no gradient at cell {cell}")]
    NonsmoothCost { cell: usize },

    #[error("unsupported parameter dimension {0} (expected 1)")]
    UnsupportedDimension(usize),
}

fn theta_suffix(theta_index: Option<usize>) -> String {
    match theta_index {
        Some(j) => format!(" for parameter #{j}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn with_theta(self, j: usize) -> Self {
        match self {
            Error::IntegrationDiverged { cell, .. } => Error::IntegrationDiverged {
                cell,
                theta_index: Some(j),
            },
            other => other,
        }
    }
}
