use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{solve_qp, QpError, QpOptions, QpProblem};
use crate::affine::AffineConstraintSet;
use crate::cbf::{cbf_rows, Barrier, CbfError, ControlAffine, InputPolytope, LieRule};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error(transparent)]
    Cbf(#[from] CbfError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("invalid filter config: {0}")]
    Config(String),
}

/// `argmin |u - u_nom|^2` over the constraint set assembled with `alpha(h) = omega * h`.
pub fn cbf_qp_filter(
    x: &DVector<f64>,
    u_nom: &DVector<f64>,
    barriers: &[Barrier],
    omega: f64,
    input: &InputPolytope,
    dynamics: &dyn ControlAffine,
    rule: LieRule,
) -> Result<DVector<f64>, FilterError> {
    let rows = cbf_rows(x, barriers, input, dynamics, rule)?;
    let cs = rows.constraint_set(omega)?;
    project_onto(u_nom, &cs)
}

/// Euclidean projection of `target` onto a constraint set.
pub fn project_onto(target: &DVector<f64>, cs: &AffineConstraintSet) -> Result<DVector<f64>, FilterError> {
    if target.len() != cs.dim() {
        return Err(QpError::Shape(format!("target has length {}, constraints act on {}", target.len(), cs.dim())).into());
    }
    if cs.is_feasible(target, 0.0) {
        return Ok(target.clone());
    }
    let p = QpProblem::projection(target, cs.a().clone(), cs.b().clone())?;
    Ok(solve_qp(&p, &QpOptions::default())?.z)
}

/// How decay multipliers are attached to barrier rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// One multiplier for every barrier.
    #[default]
    Shared,
    /// One multiplier per barrier.
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdQpConfig {
    /// Nominal decay gain `omega0`.
    pub omega0: f64,
    /// Weight on `(decay - omega0)^2`, i.e. `penalty * omega0^2 * (w - 1)^2`.
    pub penalty: f64,
    pub mode: DecayMode,
}

impl Default for OdQpConfig {
    fn default() -> Self {
        Self { omega0: 1.0, penalty: 1.0, mode: DecayMode::Shared }
    }
}

impl OdQpConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(FilterError::Config(format!("omega0 must be positive, got {}", self.omega0)));
        }
        if !(self.penalty.is_finite() && self.penalty > 0.0) {
            return Err(FilterError::Config(format!("penalty must be positive, got {}", self.penalty)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdQpSolution {
    pub u: DVector<f64>,
    /// Decay multipliers `w`: one entry when shared, one per barrier otherwise.
    pub multipliers: Vec<f64>,
    /// Effective per-barrier decay `w * omega0`.
    pub decays: Vec<f64>,
    /// Constraint set in `u` with the optimal decays substituted.
    pub constraints: AffineConstraintSet,
}

/// Optimal-decay CBF-QP over `(u, w)`:
///
/// ```text
/// min |u - u_nom|^2 + penalty * omega0^2 * sum_i (w_i - 1)^2
/// s.t. L_f h_j + L_g h_j u >= -w_i(j) * omega0 * h_j,  w >= 0,  P u <= q
/// ```
pub fn od_qp_filter(
    x: &DVector<f64>,
    u_nom: &DVector<f64>,
    barriers: &[Barrier],
    cfg: &OdQpConfig,
    input: &InputPolytope,
    dynamics: &dyn ControlAffine,
    rule: LieRule,
) -> Result<OdQpSolution, FilterError> {
    cfg.validate()?;
    let rows = cbf_rows(x, barriers, input, dynamics, rule)?;
    let m = input.dim();
    if u_nom.len() != m {
        return Err(QpError::Shape(format!("u_nom has length {}, expected {m}", u_nom.len())).into());
    }
    let nb = rows.n_barriers();
    let k = match cfg.mode {
        DecayMode::Shared => 1,
        DecayMode::PerRow => nb,
    };
    let slot = |j: usize| if cfg.mode == DecayMode::Shared { 0 } else { j };
    let dim = m + k;
    let weight = 2.0 * cfg.penalty * cfg.omega0 * cfg.omega0;

    let mut h = DMatrix::zeros(dim, dim);
    let mut c = DVector::zeros(dim);
    for i in 0..m {
        h[(i, i)] = 2.0;
        c[i] = -2.0 * u_nom[i];
    }
    for i in m..dim {
        h[(i, i)] = weight;
        c[i] = -weight;
    }

    let n_input = input.n_rows();
    let n_rows = nb + n_input + k;
    let mut g = DMatrix::zeros(n_rows, dim);
    let mut d = DVector::zeros(n_rows);
    let a = rows.a();
    for j in 0..nb {
        for col in 0..m {
            g[(j, col)] = a[(j, col)];
        }
        g[(j, m + slot(j))] = -cfg.omega0 * rows.barrier_values()[j];
        d[j] = rows.drift_terms()[j];
    }
    for r in 0..n_input {
        for col in 0..m {
            g[(nb + r, col)] = input.p()[(r, col)];
        }
        d[nb + r] = input.q()[r];
    }
    for i in 0..k {
        g[(nb + n_input + i, m + i)] = -1.0;
    }

    let sol = solve_qp(&QpProblem::new(h, c, g, d)?, &QpOptions::default())?;
    let u = sol.z.rows(0, m).into_owned();
    let multipliers: Vec<f64> = sol.z.iter().skip(m).map(|w| w.max(0.0)).collect();
    let decays: Vec<f64> = (0..nb).map(|j| multipliers[slot(j)] * cfg.omega0).collect();
    let constraints = AffineConstraintSet::new(rows.a().clone(), rows.offsets_per_row(&decays))
        .map_err(CbfError::from)?;
    Ok(OdQpSolution { u, multipliers, decays, constraints })
}
