use nalgebra::DVector;

use super::NnError;
use crate::affine::{AffineConstraintSet, AffineError, Branch, PreparedProjection, SelectionTrace};

/// Weight on the soft-constraint penalty.
pub const DEFAULT_PENALTY_WEIGHT: f64 = 100.0;

/// Mean of squared componentwise differences.
pub fn loss_mse(u: &DVector<f64>, u_nom: &DVector<f64>) -> f64 {
    (u - u_nom).norm_squared() / u.len() as f64
}

pub fn loss_mse_grad(u: &DVector<f64>, u_nom: &DVector<f64>) -> DVector<f64> {
    (u - u_nom) * (2.0 / u.len() as f64)
}

/// `weight * sum_j ReLU(a_j u - b_j)`.
pub fn loss_penalty(u: &DVector<f64>, cs: &AffineConstraintSet, weight: f64) -> f64 {
    (0..cs.n_rows()).map(|j| cs.row_residual(j, u).max(0.0)).sum::<f64>() * weight
}

/// Gradients of [`loss_penalty`] w.r.t. `u` and `b`; zero on rows with no violation.
pub fn loss_penalty_grad(u: &DVector<f64>, cs: &AffineConstraintSet, weight: f64) -> (DVector<f64>, DVector<f64>) {
    let mut gu = DVector::zeros(u.len());
    let mut gb = DVector::zeros(cs.n_rows());
    for j in 0..cs.n_rows() {
        if cs.row_residual(j, u) > 0.0 {
            gu += cs.a().row(j).transpose() * weight;
            gb[j] = -weight;
        }
    }
    (gu, gb)
}

/// Gradients of a loss through the projection layer for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGrads {
    pub f: DVector<f64>,
    pub w: DVector<f64>,
    /// One entry per constraint row; zero outside the selected subset.
    pub b: DVector<f64>,
}

/// Routes `upstream = dL/du` back through the branch recorded in `trace`.
///
/// The discrete choice (passthrough or which subset) is held fixed, so the
/// result is the exact gradient of the affine map selected on that branch.
pub fn projection_backward(
    trace: &SelectionTrace,
    prepared: &PreparedProjection,
    cs: &AffineConstraintSet,
    upstream: &DVector<f64>,
) -> Result<ProjectionGrads, NnError> {
    if cs.fingerprint() != trace.fingerprint {
        return Err(AffineError::StaleTrace.into());
    }
    if upstream.len() != cs.dim() {
        return Err(NnError::Shape(format!("upstream has length {}, expected {}", upstream.len(), cs.dim())));
    }
    let mut b = DVector::zeros(cs.n_rows());
    match &trace.branch {
        Branch::Passthrough => Ok(ProjectionGrads { f: upstream.clone(), w: DVector::zeros(upstream.len()), b }),
        Branch::Projected { candidate, gamma } => {
            let proj = prepared
                .projectors()
                .get(*candidate)
                .filter(|p| p.gamma() == gamma)
                .ok_or(AffineError::StaleTrace)?;
            let g_fw = proj.null_projector().tr_mul(upstream);
            let g_b = proj.pinv().tr_mul(upstream);
            for (slot, &j) in gamma.indices().iter().enumerate() {
                b[j] = g_b[slot];
            }
            Ok(ProjectionGrads { f: g_fw.clone(), w: g_fw, b })
        }
    }
}
