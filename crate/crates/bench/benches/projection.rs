use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safenet_core::affine::{select_output, Decomposition, PreparedProjection, ProjectionLayer, SelectorConfig};
use safenet_core::cbf::cbf_rows;
use safenet_core::sim::{sample_safe_states, scenario_scalability};
use safenet_core::AffineConstraintSet;

const M: usize = 3;

fn cases(n_c: usize, count: usize) -> Vec<(AffineConstraintSet, DVector<f64>)> {
    let s = scenario_scalability(n_c, M, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    sample_safe_states(&s, count, 0)
        .unwrap()
        .iter()
        .map(|x| {
            let rows = cbf_rows(x, &s.barriers, &s.input, &s.dynamics, s.lie_rule).unwrap();
            let f = DVector::from_fn(M, |_, _| rng.random_range(-5.0..5.0));
            (rows.constraint_set(1.0).unwrap(), f)
        })
        .collect()
}

fn select(c: &mut Criterion) {
    let cfg = SelectorConfig::default();
    let w = DVector::zeros(M);
    let mut group = c.benchmark_group("select_output");
    for n_c in [4, 8, 12] {
        let data = cases(n_c, 64);
        for kind in [Decomposition::Lite, Decomposition::Full] {
            let subsets = ProjectionLayer::new(kind, cfg).unwrap().subsets(n_c, M);
            group.bench_with_input(BenchmarkId::new(format!("{kind:?}"), n_c), &data, |b, data| {
                let mut i = 0;
                b.iter(|| {
                    let (cs, f) = &data[i % data.len()];
                    i += 1;
                    select_output(f, &w, cs, &subsets, &cfg).ok()
                });
            });
        }
    }
    group.finish();
}

/// Selection with the pseudoinverses cached, as during training.
fn prepared_select(c: &mut Criterion) {
    let cfg = SelectorConfig::default();
    let w = DVector::zeros(M);
    let mut group = c.benchmark_group("prepared_select");
    let (cs, f) = cases(12, 1).remove(0);
    for kind in [Decomposition::Lite, Decomposition::Full] {
        let subsets = ProjectionLayer::new(kind, cfg).unwrap().subsets(12, M);
        let prepared = PreparedProjection::new(cs.a(), &subsets, cfg.pinv_rtol).unwrap();
        group.bench_function(format!("{kind:?}"), |b| b.iter(|| prepared.select(&f, &w, &cs, &cfg).ok()));
    }
    group.finish();
}

criterion_group!(benches, select, prepared_select);
criterion_main!(benches);
