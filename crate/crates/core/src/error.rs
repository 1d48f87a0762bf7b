use thiserror::Error;

/// Errors raised by the estimation and simulation routines.
#[derive(Debug, Error)]
pub enum GdfmError {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("malformed panel structure: {0}")]
    Structure(String),

    #[error("domain error in series '{series}' at row {row}: {message}")]
    Domain {
        series: String,
        row: usize,
        message: String,
    },

    #[error("series '{series}' has zero variance")]
    ZeroVariance { series: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank deficiency: numerical rank {rank} below the required {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("singular Gram matrix: {0} (run gram_rank_check on the design)")]
    SingularGram(String),

    #[error("coordinate descent did not converge after {sweeps} sweeps (KKT violation {kkt_violation:e})")]
    NonConvergence { sweeps: usize, kkt_violation: f64 },

    #[error("empty active set at penalty {lambda:e}; choose a smaller penalty")]
    EmptySelection { lambda: f64 },

    #[error("transition matrix is not stable: spectral radius {radius}")]
    NonStationary { radius: f64 },

    #[error("{failed} of {total} replications failed (first failure: {first})")]
    ReplicationFailures { failed: usize, total: usize, first: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by front ends to map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad user input or configuration.
    Config,
    /// Input data could not be read or prepared.
    Data,
    /// A numerical routine failed.
    Numerical,
}

impl GdfmError {
    pub fn class(&self) -> ErrorClass {
        match self {
            GdfmError::Parse { .. }
            | GdfmError::Structure(_)
            | GdfmError::Domain { .. }
            | GdfmError::ZeroVariance { .. }
            | GdfmError::Io(_)
            | GdfmError::Csv(_) => ErrorClass::Data,
            GdfmError::InvalidInput(_) => ErrorClass::Config,
            GdfmError::RankDeficient { .. }
            | GdfmError::SingularGram(_)
            | GdfmError::NonConvergence { .. }
            | GdfmError::EmptySelection { .. }
            | GdfmError::NonStationary { .. }
            | GdfmError::ReplicationFailures { .. } => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, GdfmError>;
