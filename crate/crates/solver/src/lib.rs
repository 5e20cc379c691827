//! Sparse convex QP and binary MIQP solvers.

pub mod error;
pub mod ldl;
pub mod mip;
pub mod qp;
pub mod sparse;

pub use error::SolverError;
pub use mip::{relative_gap, solve_miqp, solve_miqp_with, MiqpProblem, MiqpSettings, MiqpSolution, MiqpStatus, NodeOutcome, NodeRecord};
pub use qp::{kkt_residual, solve_qp, solve_qp_bounds, solve_qp_with, QpBuilder, QpProblem, QpSettings, QpSolution, QpStatus};
pub use sparse::SparseMatrix;
