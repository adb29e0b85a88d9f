mod common;

use common::{rng, uniform_matrix, uniform_vector};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use safenet_core::cbf::{
    assemble_constraints, AlphaSpec, Barrier, Dynamics, HalfspaceBarrier, InputPolytope, LieRule, SmoothUnion,
};

/// Convex polygon with vertices at sorted angles on a circle, counter-clockwise.
fn random_polygon(r: &mut impl Rng, kappa: f64) -> SmoothUnion {
    let n = r.random_range(3..=8);
    let center = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
    let radius = r.random_range(0.3..2.0);
    let mut angles: Vec<f64> = (0..n).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    while angles.len() < 3 {
        angles = vec![0.0, 2.1, 4.2];
    }
    let verts: Vec<[f64; 2]> =
        angles.iter().map(|t| [center[0] + radius * t.cos(), center[1] + radius * t.sin()]).collect();
    SmoothUnion::from_polygon(&verts, kappa).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn smooth_union_sandwich_and_weight_sum(seed in any::<u64>(), kappa in 0.5f64..1000.0) {
        let mut r = rng(seed);
        let union = random_polygon(&mut r, kappa);
        let x = uniform_vector(&mut r, 2, 6.0);
        let hs = union.edge_values(&x);
        let top = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = hs.len() as f64;
        let h = union.value(&x);
        let slack = 1e-12 * (1.0 + top.abs());
        prop_assert!(h <= top + slack);
        prop_assert!(h >= top - n.ln() / kappa - slack);
        let total: f64 = union.weights(&x).iter().sum();
        prop_assert!((total - n).abs() <= 1e-10 * n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn analytic_gradient_matches_central_differences(seed in any::<u64>(), kappa in 0.5f64..30.0) {
        let mut r = rng(seed);
        let union = random_polygon(&mut r, kappa);
        let x = uniform_vector(&mut r, 2, 5.0);
        let g = union.gradient(&x);
        let eps = 1e-6;
        let fd = DVector::from_fn(2, |i, _| {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += eps;
            lo[i] -= eps;
            (union.value(&hi) - union.value(&lo)) / (2.0 * eps)
        });
        prop_assert!((&g - &fd).norm() <= 1e-4 * g.norm().max(1e-3), "g = {g}, fd = {fd}");
    }

    /// The smooth-union Hessian is `kappa` times a covariance of unit normals,
    /// so its gradient is `kappa`-Lipschitz.
    #[test]
    fn constraint_normals_are_lipschitz_in_x(seed in any::<u64>(), kappa in 0.5f64..50.0, step in 1e-6f64..1e-1) {
        let mut r = rng(seed);
        let union = random_polygon(&mut r, kappa);
        let barriers = [Barrier::SmoothUnion(union)];
        let input = InputPolytope::boxed(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let dynamics = Dynamics::SingleIntegrator { dim: 2 };
        let x = uniform_vector(&mut r, 2, 5.0);
        let dir = uniform_vector(&mut r, 2, 1.0).normalize();
        let y = &x + &dir * step;
        let alpha = AlphaSpec::Fixed { omega: 1.0 };
        let ax = assemble_constraints(&x, &barriers, &alpha, &input, &dynamics, LieRule::Analytic).unwrap();
        let ay = assemble_constraints(&y, &barriers, &alpha, &input, &dynamics, LieRule::Analytic).unwrap();
        prop_assert!((ax.a() - ay.a()).norm() <= kappa * step * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn row_count_is_barriers_plus_input_rows(seed in any::<u64>(), n_obstacles in 0usize..4, n_walls in 0usize..5, n_input in 0usize..6) {
        let mut r = rng(seed);
        let mut barriers: Vec<Barrier> = (0..n_obstacles).map(|_| Barrier::SmoothUnion(random_polygon(&mut r, 10.0))).collect();
        for _ in 0..n_walls {
            let normal = uniform_vector(&mut r, 2, 1.0) + DVector::from_element(2, 2.0);
            barriers.push(Barrier::Halfspace(HalfspaceBarrier::new(normal, -1.0).unwrap()));
        }
        let input = InputPolytope::new(uniform_matrix(&mut r, n_input, 2, 1.0), DVector::from_element(n_input, 1.0)).unwrap();
        let dynamics = Dynamics::SingleIntegrator { dim: 2 };
        let x = uniform_vector(&mut r, 2, 4.0);
        let cs = assemble_constraints(&x, &barriers, &AlphaSpec::Fixed { omega: 2.0 }, &input, &dynamics, LieRule::Analytic);
        match cs {
            Ok(cs) => prop_assert_eq!(cs.n_rows(), barriers.len() + n_input),
            // An empty stack has no rows to build a constraint set from.
            Err(_) => prop_assert_eq!(barriers.len() + n_input, 0),
        }
    }
}
