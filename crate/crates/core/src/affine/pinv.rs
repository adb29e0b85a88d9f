use nalgebra::DMatrix;

use super::AffineError;

/// Default relative singular-value cutoff.
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

/// Jacobi sweeps before giving up; small matrices converge in well under ten.
const MAX_SWEEPS: usize = 64;

/// Moore-Penrose pseudoinverse of a `k x m` matrix, returned as `m x k`.
///
/// Singular values below `rtol * sigma_max` are treated as zero, so rank
/// deficient inputs are fine. A zero matrix maps to a zero matrix.
pub fn pinv(mat: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>, AffineError> {
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(AffineError::NonFinite);
    }
    let (k, m) = mat.shape();
    if k == 0 || m == 0 {
        return Ok(DMatrix::zeros(m, k));
    }
    if k == 1 {
        return Ok(pinv_row(mat));
    }
    if k < m {
        return Ok(pinv_tall(&mat.transpose(), rtol)?.transpose());
    }
    pinv_tall(mat, rtol)
}

/// One-sided Jacobi SVD for `rows >= cols`.
///
/// Plane rotations `V` make the columns of `G = A V` mutually orthogonal, so
/// `A = G V^T` with `|g_j|` the singular values and `A^+ = V S^-2 G^T`.
fn pinv_tall(a: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>, AffineError> {
    let (rows, cols) = a.shape();
    let mut g = a.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    let tol = f64::EPSILON * rows as f64;
    // Columns this small are roundoff; rotating them against the rest never settles.
    let floor = (f64::EPSILON * a.norm()).powi(2);
    let mut converged = cols < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        converged = true;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha = g.column(p).norm_squared();
                let beta = g.column(q).norm_squared();
                let gamma = g.column(p).dot(&g.column(q));
                if gamma == 0.0 || alpha <= floor || beta <= floor || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                rotate(&mut g, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
    }
    if !converged {
        return Err(AffineError::Decomposition);
    }
    let sigma: Vec<f64> = (0..cols).map(|j| g.column(j).norm()).collect();
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(cols, rows);
    if sigma_max == 0.0 {
        return Ok(out);
    }
    let cutoff = rtol * sigma_max;
    for (j, &s) in sigma.iter().enumerate() {
        if s <= cutoff {
            continue;
        }
        out.ger(1.0 / (s * s), &v.column(j), &g.column(j), 1.0);
    }
    Ok(out)
}

/// Columns `(p, q)` become `(c p - s q, s p + c q)`.
fn rotate(mat: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..mat.nrows() {
        let (x, y) = (mat[(r, p)], mat[(r, q)]);
        mat[(r, p)] = c * x - s * y;
        mat[(r, q)] = s * x + c * y;
    }
}

/// Closed form for a single row: `a^T / |a|^2`.
fn pinv_row(row: &DMatrix<f64>) -> DMatrix<f64> {
    let norm_sq: f64 = row.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return DMatrix::zeros(row.ncols(), 1);
    }
    row.transpose() / norm_sq
}
