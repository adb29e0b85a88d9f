mod common;

use common::{rng, uniform_matrix, uniform_vector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use safenet_core::affine::{
    enumerate_subsets_full, enumerate_subsets_lite, full_count, lite_count, pinv, project_subconstraint,
    select_output, Decomposition, SelectorConfig, DEFAULT_PINV_RTOL,
};
use safenet_core::AffineConstraintSet;

/// Polytope `A y <= A z0 + s` with `s >= 0`, so `z0` is feasible.
fn nonempty_polytope(seed: u64, n_c: usize, m: usize) -> (AffineConstraintSet, DVector<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let a = uniform_matrix(&mut r, n_c, m, 1.0);
    let z0 = uniform_vector(&mut r, m, 1.0);
    let slack = DVector::from_fn(n_c, |_, _| if r.random_bool(0.3) { 0.0 } else { r.random_range(0.0..1.0) });
    let b = &a * &z0 + slack;
    let f = uniform_vector(&mut r, m, 4.0);
    let w = uniform_vector(&mut r, m, 2.0);
    (AffineConstraintSet::new(a, b).unwrap(), f, w)
}

fn subsets(kind: Decomposition, n_c: usize, m: usize) -> Vec<safenet_core::SubsetIndex> {
    match kind {
        Decomposition::Lite => enumerate_subsets_lite(n_c, m),
        Decomposition::Full => enumerate_subsets_full(n_c, m),
    }
}

/// Matrix of the requested rank, built as a product of random factors.
fn matrix_with_rank(seed: u64, rows: usize, cols: usize, rank: usize) -> DMatrix<f64> {
    let mut r = rng(seed);
    if rank == 0 {
        return DMatrix::zeros(rows, cols);
    }
    uniform_matrix(&mut r, rows, rank, 1.0) * uniform_matrix(&mut r, rank, cols, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn selection_is_feasible(seed in any::<u64>(), n_c in 1usize..=8, m in 1usize..=4, full in any::<bool>()) {
        let kind = if full { Decomposition::Full } else { Decomposition::Lite };
        let (cs, f, w) = nonempty_polytope(seed, n_c, m);
        let cfg = SelectorConfig::default();
        let (y, trace) = select_output(&f, &w, &cs, &subsets(kind, n_c, m), &cfg).unwrap();
        prop_assert!(cs.max_residual(&y) <= cfg.feas_tol);
        prop_assert!(trace.is_passthrough() || trace.feasible_count >= 1);
    }

    #[test]
    fn selection_is_idempotent(seed in any::<u64>(), n_c in 1usize..=8, m in 1usize..=4) {
        let (cs, f, w) = nonempty_polytope(seed, n_c, m);
        let cfg = SelectorConfig::default();
        let subs = enumerate_subsets_lite(n_c, m);
        let (y, _) = select_output(&f, &w, &cs, &subs, &cfg).unwrap();
        let (again, trace) = select_output(&y, &w, &cs, &subs, &cfg).unwrap();
        prop_assert!(trace.is_passthrough());
        prop_assert_eq!(again, y);
    }

    #[test]
    fn lite_and_full_coincide_up_to_two_inputs(seed in any::<u64>(), n_c in 1usize..=10, m in 1usize..=2) {
        let (cs, f, w) = nonempty_polytope(seed, n_c, m);
        let cfg = SelectorConfig::default();
        let lite = select_output(&f, &w, &cs, &enumerate_subsets_lite(n_c, m), &cfg).unwrap();
        let full = select_output(&f, &w, &cs, &enumerate_subsets_full(n_c, m), &cfg).unwrap();
        prop_assert_eq!(lite.0, full.0);
        prop_assert_eq!(lite.1.branch, full.1.branch);
    }

    #[test]
    fn projection_is_linear_in_f_w_and_b(seed in any::<u64>(), k in 1usize..=3, m in 1usize..=4, s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let mut r = rng(seed);
        let a = uniform_matrix(&mut r, k, m, 1.0);
        let (f1, f2) = (uniform_vector(&mut r, m, 2.0), uniform_vector(&mut r, m, 2.0));
        let (w1, w2) = (uniform_vector(&mut r, m, 2.0), uniform_vector(&mut r, m, 2.0));
        let (b1, b2) = (uniform_vector(&mut r, k, 2.0), uniform_vector(&mut r, k, 2.0));
        let p = |f: &DVector<f64>, w: &DVector<f64>, b: &DVector<f64>| project_subconstraint(f, w, &a, b, DEFAULT_PINV_RTOL).unwrap();
        let combined = p(&(&f1 * s + &f2 * t), &(&w1 * s + &w2 * t), &(&b1 * s + &b2 * t));
        let separate = p(&f1, &w1, &b1) * s + p(&f2, &w2, &b2) * t;
        prop_assert!((combined - separate).amax() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn penrose_conditions(seed in any::<u64>(), rows in 1usize..=6, cols in 1usize..=6, deficit in 0usize..=3) {
        let rank = rows.min(cols).saturating_sub(deficit);
        let a = matrix_with_rank(seed, rows, cols, rank);
        let p = pinv(&a, DEFAULT_PINV_RTOL).unwrap();
        prop_assert_eq!(p.shape(), (cols, rows));
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!((&ap * &a - &a).amax() <= 1e-8);
        prop_assert!((&pa * &p - &p).amax() <= 1e-8);
        prop_assert!((ap.transpose() - &ap).amax() <= 1e-8);
        prop_assert!((pa.transpose() - &pa).amax() <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// Exact duplicate and negated rows, as produced by box input constraints.
    #[test]
    fn penrose_conditions_with_repeated_rows(seed in any::<u64>(), rows in 1usize..=4, cols in 1usize..=5, copies in 1usize..=3) {
        let mut r = rng(seed);
        let base = uniform_matrix(&mut r, rows, cols, 1.0);
        let mut stacked = base.clone();
        for c in 0..copies {
            let src = r.random_range(0..rows);
            let sign = if c % 2 == 0 { -1.0 } else { 2.0 };
            let last = stacked.nrows();
            stacked = stacked.insert_row(last, 0.0);
            let row = base.row(src) * sign;
            stacked.row_mut(last).copy_from(&row);
        }
        for a in [stacked.clone(), stacked.transpose()] {
            let p = pinv(&a, DEFAULT_PINV_RTOL).unwrap();
            let ap = &a * &p;
            let pa = &p * &a;
            prop_assert!((&ap * &a - &a).amax() <= 1e-8);
            prop_assert!((&pa * &p - &p).amax() <= 1e-8);
            prop_assert!((ap.transpose() - &ap).amax() <= 1e-8);
            prop_assert!((pa.transpose() - &pa).amax() <= 1e-8);
        }
    }
}

/// Subsets of `{0..n_c}` with between one and `k` elements, counted by bitmask.
fn count_by_bitmask(n_c: usize, allowed: impl Fn(usize) -> bool) -> u128 {
    (1u32..(1 << n_c)).filter(|mask| allowed(mask.count_ones() as usize)).count() as u128
}

#[test]
fn candidate_counts_match_bitmask_enumeration() {
    for n_c in 1..=14 {
        for m in 1..=5 {
            let k = n_c.min(m);
            let full = count_by_bitmask(n_c, |size| size <= k);
            let lite = count_by_bitmask(n_c, |size| size == 1 || size == k);
            assert_eq!(full_count(n_c, m), full);
            assert_eq!(lite_count(n_c, m), lite);
            assert_eq!(enumerate_subsets_full(n_c, m).len() as u128, full);
            assert_eq!(enumerate_subsets_lite(n_c, m).len() as u128, lite);
            assert!(lite <= full);
            assert_eq!(lite < full, k >= 3, "n_c={n_c}, m={m}");
        }
    }
}
