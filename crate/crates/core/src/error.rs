use thiserror::Error;

/// Errors raised by model construction and the numerical solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular system (pivot {pivot:.3e} at row {row})")]
    SingularSystem { row: usize, pivot: f64 },

    #[error("singular Jacobian in Newton iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("Newton did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("oracle limited to {cap} atoms, got {n}")]
    OracleCapExceeded { n: usize, cap: usize },

    #[error("Krylov seed block has rank zero")]
    SeedExhausted,

    #[error("extended space is rank deficient: {0}")]
    RankDeficient(String),

    #[error("projected block-tridiagonal matrix is singular")]
    SingularT,

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    #[error("branch lost near load {load:.6e}")]
    BranchLost { load: f64 },
}

pub type Result<T> = std::result::Result<T, AccError>;
