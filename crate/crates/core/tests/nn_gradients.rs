mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use safenet_core::cbf::{cbf_rows, Barrier, Dynamics, HalfspaceBarrier, InputPolytope, LieRule, SmoothUnion};
use safenet_core::nn::{loss_and_grads, prepare_projections, Architecture, Mlp, Policy, PolicySpec, TrainingSet};

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

#[test]
fn mlp_backward_matches_central_differences() {
    let mut rng = common::rng(21);
    for trial in 0..20 {
        let sizes = [3, rng.random_range(2..9), rng.random_range(2..9), 2];
        let mut net = Mlp::new_uniform(&sizes, &mut rng).unwrap();
        let x = common::uniform_matrix(&mut rng, 3, 4, 2.0);
        let up = common::uniform_matrix(&mut rng, 2, 4, 1.0);
        let objective = |net: &Mlp| net.forward_batch(&x).unwrap().component_mul(&up).sum();

        let (_, cache) = net.forward_cached(&x).unwrap();
        let (grads, gx) = net.backward(&cache, &up).unwrap();
        let analytic: Vec<f64> = grads.tensors().concat();

        let h = 1e-6;
        let mut numeric = Vec::with_capacity(analytic.len());
        let n_tensors = net.tensors_mut().len();
        for t in 0..n_tensors {
            let len = net.tensors_mut()[t].len();
            for i in 0..len {
                let orig = net.tensors_mut()[t][i];
                net.tensors_mut()[t][i] = orig + h;
                let plus = objective(&net);
                net.tensors_mut()[t][i] = orig - h;
                let minus = objective(&net);
                net.tensors_mut()[t][i] = orig;
                numeric.push((plus - minus) / (2.0 * h));
            }
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "trial {trial}: parameter gradient rel. error {err}");

        let mut gx_num = DMatrix::zeros(3, 4);
        for i in 0..3 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let fp = net.forward_batch(&xp).unwrap().component_mul(&up).sum();
                let fm = net.forward_batch(&xm).unwrap().component_mul(&up).sum();
                gx_num[(i, j)] = (fp - fm) / (2.0 * h);
            }
        }
        let err = rel_err(gx.as_slice(), gx_num.as_slice());
        assert!(err < 1e-4, "trial {trial}: input gradient rel. error {err}");
    }
}

fn crowded_set(rng: &mut impl Rng, count: usize) -> TrainingSet {
    let dynamics = Dynamics::SingleIntegrator { dim: 2 };
    let input = InputPolytope::boxed(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
    let square = SmoothUnion::from_polygon(&[[0.5, 0.5], [1.0, 0.5], [1.0, 1.0], [0.5, 1.0]], 10.0).unwrap();
    let barriers = vec![
        Barrier::SmoothUnion(square),
        Barrier::Halfspace(HalfspaceBarrier::new(DVector::from_column_slice(&[-1.0, 0.0]), -1.5).unwrap()),
    ];
    let mut states = Vec::new();
    while states.len() < count {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-0.5..1.4));
        if barriers.iter().all(|b| b.value(&x) > 0.05) {
            states.push(x);
        }
    }
    let labels = states.iter().map(|x| (x * -2.0 + DVector::from_element(2, 1.5)).map(|v| v.clamp(-1.0, 1.0))).collect();
    let rows = states.iter().map(|x| cbf_rows(x, &barriers, &input, &dynamics, LieRule::Analytic).unwrap()).collect();
    TrainingSet::new(&states, labels, rows).unwrap()
}

fn composed_check(arch: Architecture, seed: u64) {
    let mut rng = common::rng(seed);
    let set = crowded_set(&mut rng, 24);
    let spec = PolicySpec { controller_hidden: vec![6, 6], alpha_hidden: vec![5], omega: 1.0, ..PolicySpec::default() };
    let mut policy = Policy::new(arch, 2, 2, &spec, &mut rng).unwrap();
    let prepared = prepare_projections(&policy, &set).unwrap();
    let base = loss_and_grads(&policy, &set, &prepared, 100.0).unwrap();
    // The check is only meaningful if some samples leave the passthrough branch.
    let active = (0..set.len())
        .filter(|&i| {
            let x = set.states().column(i).into_owned();
            let out = policy.act(&x, &set.rows()[i]).unwrap();
            match out.trace {
                Some(trace) => !trace.is_passthrough(),
                None => !out.constraints.is_feasible(&out.u, 0.0),
            }
        })
        .count();
    assert!(active > 0, "{arch:?}: no sample exercises the constrained branch");
    let analytic: Vec<f64> = base.controller.tensors().concat().into_iter().chain(base.alpha.tensors().concat()).collect();

    let h = 1e-6;
    let mut numeric = Vec::new();
    for which in 0..2 {
        let shapes: Vec<usize> = {
            let (c, a) = policy.nets_mut();
            let net = if which == 0 { c } else { a };
            net.tensors_mut().iter().map(|t| t.len()).collect()
        };
        for (t, &len) in shapes.iter().enumerate() {
            for i in 0..len {
                let eval = |delta: f64, policy: &mut Policy| {
                    let (c, a) = policy.nets_mut();
                    let net = if which == 0 { c } else { a };
                    net.tensors_mut()[t][i] += delta;
                    loss_and_grads(policy, &set, &prepared, 100.0).unwrap().loss
                };
                let plus = eval(h, &mut policy);
                let minus = eval(-2.0 * h, &mut policy);
                eval(h, &mut policy);
                numeric.push((plus - minus) / (2.0 * h));
            }
        }
    }
    let err = rel_err(&analytic, &numeric);
    assert!(err < 1e-3, "{arch:?}: composed gradient rel. error {err}");
}

#[test]
fn composed_gradient_through_projection_matches_finite_differences() {
    composed_check(Architecture::Caffnet, 5);
    composed_check(Architecture::CaffnetLite, 6);
}

#[test]
fn composed_gradient_with_penalty_matches_finite_differences() {
    composed_check(Architecture::NnPenalty, 7);
}
