//! Independent reference implementations used only by tests.
#![allow(dead_code)]

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force QP: try every working set of size `<= dim`, solve its
/// equality KKT system, keep primal/dual feasible points, return the best.
pub fn qp_by_enumeration(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = c.len();
    let rows = g.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for k in 0..=n.min(rows) {
        for set in (0..rows).combinations(k) {
            let mut kkt = DMatrix::zeros(n + k, n + k);
            let mut rhs = DVector::zeros(n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(h);
            rhs.rows_mut(0, n).copy_from(&(-c));
            for (slot, &i) in set.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + slot, j)] = g[(i, j)];
                    kkt[(j, n + slot)] = g[(i, j)];
                }
                rhs[n + slot] = d[i];
            }
            let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
            if (&kkt * &sol - &rhs).amax() > 1e-9 {
                continue;
            }
            let z = sol.rows(0, n).into_owned();
            let lambda = sol.rows(n, k);
            if lambda.iter().any(|&l| l < -1e-9) {
                continue;
            }
            if (g * &z - d).iter().any(|&r| r > 1e-9) {
                continue;
            }
            let obj = 0.5 * z.dot(&(h * &z)) + c.dot(&z);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, z));
            }
        }
    }
    best.map(|(_, z)| z)
}

/// Euclidean projection of `f` onto `{y : A y <= b}` via the enumeration oracle.
pub fn project_by_enumeration(a: &DMatrix<f64>, b: &DVector<f64>, f: &DVector<f64>) -> Option<DVector<f64>> {
    let n = f.len();
    qp_by_enumeration(&(DMatrix::identity(n, n) * 2.0), &(f * -2.0), a, b)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn uniform_vector(rng: &mut impl Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

/// Random strictly convex QP whose feasible set contains a known interior point.
pub fn random_feasible_qp(
    rng: &mut impl Rng,
    dim: usize,
    rows: usize,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let m = uniform_matrix(rng, dim, dim, 1.0);
    let h = m.transpose() * &m + DMatrix::identity(dim, dim) * 0.1;
    let c = uniform_vector(rng, dim, 3.0);
    let g = uniform_matrix(rng, rows, dim, 1.0);
    let z0 = uniform_vector(rng, dim, 1.0);
    let slack = DVector::from_fn(rows, |_, _| rng.random_range(0.0..1.0));
    let d = &g * z0 + slack;
    (h, c, g, d)
}
