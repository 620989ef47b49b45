use std::io;

/// Failure modes shared by every numerical and I/O operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("metric is not positive definite at node {node}: smallest eigenvalue {min_eigenvalue:e} below floor {floor:e}")]
    SpdViolation {
        node: usize,
        min_eigenvalue: f64,
        floor: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("eigensolver did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("ground state is not positive: min w = {min_w:e} at node {node}")]
    PositivityFailure { node: usize, min_w: f64 },

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("diffeomorphism Jacobian collapsed at node {node} (det = {det:e})")]
    JacobianCollapse { node: usize, det: f64 },

    #[error("elliptic solve stalled after {iterations} iterations (relative residual {residual:e})")]
    SolverStall { iterations: usize, residual: f64 },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("malformed snapshot at byte {offset}: {message}")]
    FormatError { offset: u64, message: String },

    #[error("snapshot checksum mismatch: header says {expected:08x}, payload hashes to {actual:08x}")]
    ChecksumMismatch { expected: u32, actual: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
