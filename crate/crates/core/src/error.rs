use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("correlation table miss for (i1={i1}, i2={i2}, dtau={dtau})")]
    TableMiss { i1: i64, i2: i64, dtau: i64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub fn config(line: usize, message: impl Into<String>) -> Self {
        SimError::Config {
            line,
            message: message.into(),
        }
    }

    /// Process exit code used by the `sim` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config { .. } | SimError::InvalidInput(_) => 1,
            SimError::Validation(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
