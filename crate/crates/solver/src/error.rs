use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid bounds on variable {index}: lo={lo} > hi={hi}")]
    Bounds { index: usize, lo: f64, hi: f64 },
    #[error("binary index {0} out of range or with bounds outside [0, 1]")]
    BinaryIndex(usize),
    #[error("quadratic matrix is not symmetric (asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("problem is infeasible (minimum violation {0:e})")]
    Infeasible(f64),
    #[error("node limit reached without an integral feasible point")]
    NodeLimitNoIncumbent,
}
