use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::QpError;

/// `min 1/2 z' H z + c' z  s.t.  G z <= d`, with `H` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    h: DMatrix<f64>,
    c: DVector<f64>,
    g: DMatrix<f64>,
    d: DVector<f64>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, c: DVector<f64>, g: DMatrix<f64>, d: DVector<f64>) -> Result<Self, QpError> {
        let n = c.len();
        if h.shape() != (n, n) || g.ncols() != n || g.nrows() != d.len() {
            return Err(QpError::Shape(format!(
                "H {:?}, c {}, G {:?}, d {}",
                h.shape(),
                n,
                g.shape(),
                d.len()
            )));
        }
        if h.iter().chain(c.iter()).chain(g.iter()).chain(d.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite);
        }
        let scale = h.amax().max(1.0);
        if (&h - h.transpose()).amax() > 1e-10 * scale {
            return Err(QpError::NotConvex("H is not symmetric".into()));
        }
        Ok(Self { h, c, g, d })
    }

    /// `min |z - target|^2  s.t.  G z <= d`.
    pub fn projection(target: &DVector<f64>, g: DMatrix<f64>, d: DVector<f64>) -> Result<Self, QpError> {
        let n = target.len();
        Self::new(DMatrix::identity(n, n) * 2.0, target * -2.0, g, d)
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.d.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.c.dot(z)
    }

    fn row_residual(&self, i: usize, z: &DVector<f64>) -> f64 {
        let mut acc = -self.d[i];
        for j in 0..self.dim() {
            acc += self.g[(i, j)] * z[j];
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// A row counts as violated when `g_i z - d_i` exceeds this.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { feas_tol: 1e-11, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Rows in the final working set, in insertion order.
    pub active: Vec<usize>,
    /// One multiplier per row; zero off the working set.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Worst-case KKT residuals of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `|H z + c + G' lambda|_inf`.
    pub stationarity: f64,
    /// `max(0, max_i g_i z - d_i)`.
    pub primal: f64,
    /// `max(0, -min_i lambda_i)`.
    pub dual: f64,
    /// `max_i |lambda_i (g_i z - d_i)|`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub fn kkt_residuals(p: &QpProblem, sol: &QpSolution) -> KktResiduals {
    let grad = &p.h * &sol.z + &p.c + p.g.tr_mul(&sol.multipliers);
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..p.n_constraints() {
        let r = p.row_residual(i, &sol.z);
        primal = primal.max(r);
        complementarity = complementarity.max((sol.multipliers[i] * r).abs());
    }
    KktResiduals {
        stationarity: grad.amax(),
        primal,
        dual: sol.multipliers.iter().fold(0.0f64, |acc, &l| acc.max(-l)),
        complementarity,
    }
}

/// Dual active-set method (Goldfarb-Idnani style).
///
/// Starts from the unconstrained minimizer and repeatedly adds the most
/// violated row, moving along the primal-dual step that keeps the working
/// set tight and dropping rows whose multiplier would turn negative. A row
/// that is linearly dependent on the working set and cannot be reached by
/// dropping any row proves infeasibility.
pub fn solve_qp(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution, QpError> {
    let n = p.dim();
    let chol: Cholesky<f64, Dyn> = p
        .h
        .clone()
        .cholesky()
        .ok_or_else(|| QpError::NotConvex("H is not positive definite".into()))?;
    let mut z = -chol.solve(&p.c);
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut iterations = 0;

    loop {
        // Most violated row outside the working set.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..p.n_constraints() {
            if active.contains(&i) {
                continue;
            }
            let r = p.row_residual(i, &z);
            if r > opts.feas_tol && pick.is_none_or(|(_, best)| r > best) {
                pick = Some((i, r));
            }
        }
        let Some((row, _)) = pick else { break };
        let g_row = p.g.row(row).transpose();
        let mut lambda_row = 0.0;

        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                return Err(QpError::MaxIterations(opts.max_iter));
            }
            let (dz, dlambda) = step_direction(p, &chol, &active, &g_row)?;
            let slack = p.row_residual(row, &z);
            let gdz = g_row.dot(&dz);
            let dependent = dz.amax() <= 1e-12 * (1.0 + g_row.amax());
            let full_step = if dependent || gdz >= 0.0 { f64::INFINITY } else { slack / -gdz };

            let mut partial_step = f64::INFINITY;
            let mut blocking = None;
            for (k, (&lam, &dl)) in lambda.iter().zip(dlambda.iter()).enumerate() {
                if dl < -1e-14 {
                    let t = lam / -dl;
                    if t < partial_step {
                        partial_step = t;
                        blocking = Some(k);
                    }
                }
            }

            if full_step.is_infinite() && partial_step.is_infinite() {
                return Err(QpError::Infeasible);
            }
            let t = full_step.min(partial_step);
            if !dependent {
                z.axpy(t, &dz, 1.0);
            }
            for (lam, dl) in lambda.iter_mut().zip(dlambda.iter()) {
                *lam += t * dl;
            }
            lambda_row += t;

            if partial_step < full_step {
                let k = blocking.expect("finite partial step has a blocking row");
                active.remove(k);
                lambda.remove(k);
                continue;
            }
            active.push(row);
            lambda.push(lambda_row);
            break;
        }
    }

    let mut multipliers = DVector::zeros(p.n_constraints());
    for (&i, &lam) in active.iter().zip(&lambda) {
        multipliers[i] = lam.max(0.0);
    }
    debug_assert_eq!(z.len(), n);
    Ok(QpSolution { objective: p.objective(&z), z, active, multipliers, iterations })
}

/// Solves `H dz + N' dlambda = -g`, `N dz = 0` for the working-set normals `N`.
fn step_direction(
    p: &QpProblem,
    chol: &Cholesky<f64, Dyn>,
    active: &[usize],
    g_row: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<f64>), QpError> {
    let h_inv_g = chol.solve(g_row);
    if active.is_empty() {
        return Ok((-h_inv_g, Vec::new()));
    }
    let normals = p.g.select_rows(active);
    let h_inv_nt = chol.solve(&normals.transpose());
    let schur = &normals * &h_inv_nt;
    let rhs = -(&normals * &h_inv_g);
    let dlambda = schur
        .lu()
        .solve(&rhs)
        .ok_or_else(|| QpError::Numerical("working set became linearly dependent".into()))?;
    let dz = -(h_inv_g + h_inv_nt * &dlambda);
    Ok((dz, dlambda.iter().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn unconstrained_minimum() {
        let u_nom = v(&[0.3, -1.2]);
        let p = QpProblem::projection(&u_nom, DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap();
        let sol = solve_qp(&p, &QpOptions::default()).unwrap();
        assert_relative_eq!(sol.z, u_nom, epsilon = 1e-15);
        assert!(sol.active.is_empty());
    }

    #[test]
    fn scalar_clamp() {
        // min (z - 2)^2 s.t. z <= 1
        let p = QpProblem::projection(&v(&[2.0]), DMatrix::from_element(1, 1, 1.0), v(&[1.0])).unwrap();
        let sol = solve_qp(&p, &QpOptions::default()).unwrap();
        assert_relative_eq!(sol.z[0], 1.0, epsilon = 1e-15);
        assert_eq!(sol.active, vec![0]);
        assert_relative_eq!(sol.multipliers[0], 2.0, epsilon = 1e-14);
        assert!(kkt_residuals(&p, &sol).max() < 1e-12);
    }

    #[test]
    fn single_constraint_closed_form() {
        let u_nom = v(&[1.0, 2.0, -0.5]);
        let a = v(&[0.5, 1.0, 2.0]);
        let b = 0.25;
        let g = DMatrix::from_row_slice(1, 3, a.as_slice());
        let p = QpProblem::projection(&u_nom, g, v(&[b])).unwrap();
        let sol = solve_qp(&p, &QpOptions::default()).unwrap();
        let expected = &u_nom - &a * ((a.dot(&u_nom) - b) / a.norm_squared());
        assert_relative_eq!(sol.z, expected, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_rows_are_reported() {
        // z <= -1 and -z <= 0
        let p = QpProblem::projection(&v(&[0.5]), DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), v(&[-1.0, 0.0]))
            .unwrap();
        assert_eq!(solve_qp(&p, &QpOptions::default()), Err(QpError::Infeasible));
    }

    #[test]
    fn duplicate_rows_do_not_break_the_working_set() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 2.0, 0.0]);
        let p = QpProblem::projection(&v(&[3.0, 1.0]), g, v(&[1.0, 1.0, 2.0])).unwrap();
        let sol = solve_qp(&p, &QpOptions::default()).unwrap();
        assert_relative_eq!(sol.z, v(&[1.0, 1.0]), epsilon = 1e-12);
        assert!(kkt_residuals(&p, &sol).max() < 1e-10);
    }

    #[test]
    fn vertex_of_a_box() {
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let p = QpProblem::projection(&v(&[3.0, -5.0]), g, v(&[1.0, 1.0, 1.0, 1.0])).unwrap();
        let sol = solve_qp(&p, &QpOptions::default()).unwrap();
        assert_relative_eq!(sol.z, v(&[1.0, -1.0]), epsilon = 1e-14);
        let mut act = sol.active.clone();
        act.sort();
        assert_eq!(act, vec![0, 3]);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = QpProblem::new(bad, v(&[0.0, 0.0]), DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap();
        assert!(matches!(solve_qp(&p, &QpOptions::default()), Err(QpError::NotConvex(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QpProblem::new(asym, v(&[0.0, 0.0]), DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
    }
}
