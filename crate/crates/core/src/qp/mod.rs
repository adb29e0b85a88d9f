//! Dense convex QP solver and the two QP safety filters built on it.
//!
//! The solver is a dual active-set method for small strictly convex
//! problems (a handful of variables, a few dozen rows). `H` must be
//! positive definite; semidefinite problems are rejected as `NotConvex`.

mod filters;
mod solver;

pub use filters::{cbf_qp_filter, od_qp_filter, project_onto, DecayMode, FilterError, OdQpConfig, OdQpSolution};
pub use solver::{kkt_residuals, solve_qp, KktResiduals, QpOptions, QpProblem, QpSolution};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite problem data")]
    NonFinite,
    #[error("not strictly convex: {0}")]
    NotConvex(String),
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("no convergence after {0} iterations")]
    MaxIterations(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}
