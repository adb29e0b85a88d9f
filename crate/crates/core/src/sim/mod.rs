//! Scenarios, closed-loop rollouts, training-state sampling and metrics.

mod metrics;
mod rollout;
mod scenario;

pub use metrics::{
    aggregate, compute_metrics, format_cell, format_pct_cell, write_metrics_csv, write_summary_csv, MetricSummary,
    RolloutMetrics, METRIC_COLUMNS, VIOLATION_TOL,
};
pub use rollout::{
    rollout, Action, Controller, NominalController, OdQpController, QpController, Trajectory, ZeroController,
};
pub use scenario::{
    nominal_control, sample_safe_states, scenario_scalability, scenario_single_integrator, single_integrator_file,
    BoxSpec, DynamicsSpec, HalfspaceSpec, InputSpec, ObstacleSpec, Scenario, ScenarioFile,
    SINGLE_INTEGRATOR_OBSTACLES,
};

use nalgebra::{DMatrix, DVector};

use crate::cbf::{CbfError, InputPolytope};
use crate::nn::NnError;
use crate::qp::{solve_qp, FilterError, QpOptions, QpProblem};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Cbf(#[from] CbfError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("safe-set sampling accepted {accepted} of {drawn} draws; the safe set is too small for the sampling box")]
    Sampling { drawn: u64, accepted: u64 },
    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Puts `u` into the input set: a clamp for boxes, a Euclidean projection otherwise.
pub fn saturate(input: &InputPolytope, u: &DVector<f64>) -> DVector<f64> {
    if let Some(clamped) = input.clamp(u) {
        return clamped;
    }
    if input.n_rows() == 0 || input.contains(u, 0.0) {
        return u.clone();
    }
    let p = QpProblem::projection(u, DMatrix::clone(input.p()), input.q().clone());
    match p.and_then(|p| solve_qp(&p, &QpOptions::default())) {
        Ok(sol) => sol.z,
        // An empty input set leaves nothing to project onto.
        Err(_) => u.clone(),
    }
}
