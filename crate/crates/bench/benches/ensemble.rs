use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rdelab::experiment::presets::{reference_model, reference_nonlinear};
use rdelab::lp::quasi_norm;
use rdelab::rde::{
    simulate_linear, simulate_nonlinear, EnsembleSpec, Label, Refinement, Sampling, TimeGrid,
};
use rdelab::tail::{default_hill_k, hill_estimator};

fn linear_ensemble(c: &mut Criterion) {
    let model = reference_model(1.0);
    let grid = TimeGrid::with_horizon(0.01, 10.0).unwrap();
    let mut g = c.benchmark_group("simulate_linear");
    g.sample_size(10);
    for workers in [1, 4] {
        let spec = EnsembleSpec::new(grid, 2_000, 1)
            .record_every(10)
            .workers(workers);
        g.bench_with_input(BenchmarkId::new("plain", workers), &spec, |b, spec| {
            b.iter(|| simulate_linear(&model, spec, &[Label::X]).unwrap())
        });
    }
    let tilted = EnsembleSpec::new(grid, 2_000, 1)
        .record_every(10)
        .sampling(Sampling::TiltedMixture { theta: 2.5 });
    g.bench_function("tilted", |b| {
        b.iter(|| simulate_linear(&model, &tilted, &[Label::X]).unwrap())
    });
    g.finish();
}

fn nonlinear_ensemble(c: &mut Criterion) {
    let model = reference_nonlinear(1.0);
    let grid = TimeGrid::with_horizon(0.01, 5.0).unwrap();
    let spec = EnsembleSpec::new(grid, 500, 1).record_every(10);
    let mut g = c.benchmark_group("simulate_nonlinear");
    g.sample_size(10);
    g.bench_function("sin_modulated", |b| {
        b.iter(|| simulate_nonlinear(&model, &spec, &[Label::X], Refinement::default()).unwrap())
    });
    g.finish();
}

fn estimators(c: &mut Criterion) {
    // Pareto(2) quantiles
    let xs: Vec<f64> = (1..=100_000)
        .map(|i| (i as f64 / 100_001.0).powf(-0.5))
        .collect();
    c.bench_function("quasi_norm_1e5", |b| {
        b.iter(|| quasi_norm(black_box(&xs), 0.5).unwrap())
    });
    let k = default_hill_k(xs.len());
    c.bench_function("hill_1e5", |b| {
        b.iter(|| hill_estimator(black_box(&xs), k).unwrap())
    });
}

criterion_group!(benches, linear_ensemble, nonlinear_ensemble, estimators);
criterion_main!(benches);
