use thiserror::Error;

/// Structural and numeric failures shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("task list is empty")]
    EmptyTasks,

    #[error("group is empty")]
    EmptyGroup,

    #[error("task index {index} out of range for {count} tasks")]
    TaskIndexOutOfRange { index: usize, count: usize },

    #[error("matrix is not square: {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric: |S - S^T| max entry {max_dev:.3e} exceeds {tol:.3e}")]
    NotSymmetric { max_dev: f64, tol: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal {off:.3e})")]
    EigenNoConvergence { sweeps: usize, off: f64 },

    #[error("invalid group count K={k} for {m} tasks")]
    InvalidGroupCount { k: usize, m: usize },

    #[error("probe diverged on tasks {tasks:?} (parameter norm exceeded {limit:.1e})")]
    ProbeDiverged { tasks: Vec<usize>, limit: f64 },

    #[error("transferability undefined: |reference loss| {loss:.3e} below {min:.3e}")]
    DegenerateReferenceLoss { loss: f64, min: f64 },

    #[error("numeric inconsistency: {0}")]
    NumericInconsistency(String),

    #[error("{context}: expected {expected}, got {got}")]
    Structural { context: String, expected: String, got: String },

    #[error("partition invalid: {0}")]
    InvalidPartition(String),

    #[error("trace too short: budget {requested} exceeds recorded {available}")]
    TraceTooShort { requested: u64, available: u64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code mapping used by the command-line tool: 2 for configuration
    /// problems, 3 for numeric or verification failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            _ => 3,
        }
    }
}
