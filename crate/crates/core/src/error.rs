use thiserror::Error;

/// Errors produced anywhere in the explanation pipeline.
#[derive(Debug, Error)]
pub enum MameError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("oracle transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("oracle returned an invalid response: {0}")]
    OracleResponse(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("iteration cap of {cap} reached ({context}); last residual {residual:e}")]
    IterationCap {
        cap: usize,
        context: &'static str,
        residual: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MameError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MameError::InvalidInput(msg.into())
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            MameError::Parse { .. } => "parse",
            MameError::InvalidInput(_) => "invalid_input",
            MameError::Transport { .. } => "transport",
            MameError::OracleResponse(_) => "oracle_response",
            MameError::Numerical(_) => "numerical",
            MameError::IterationCap { .. } => "iteration_cap",
            MameError::Io(_) => "io",
            MameError::Json(_) => "json",
        }
    }
}

pub type Result<T, E = MameError> = std::result::Result<T, E>;
