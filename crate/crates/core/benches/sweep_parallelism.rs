//! Compares the rayon-parallel sweep driver against the sequential fallback
//! on a small fixed plan. With the default `parallel` feature, `run_plan`
//! fans the (error level, trial) work units out across cores; the sequential
//! path is always available for comparison.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rsma_istn::harness::{self, ExperimentPlan, SweepAxis};
use rsma_istn::scenario::ScenarioConfig;

fn bench_plan() -> ExperimentPlan {
    ExperimentPlan {
        base: ScenarioConfig { n_bs_antennas: 4, ..Default::default() },
        axis: SweepAxis::BsPowerDbm,
        values: vec![30.0],
        csit_error_levels: vec![0.0],
        schemes: vec!["SDMA-ISTN".into()],
        n_trials: 4,
        sca_max_iters: 6,
        sca_tol: 1e-3,
    }
}

fn sweep_drivers(c: &mut Criterion) {
    let plan = bench_plan();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| harness::run_plan(black_box(&plan)).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| harness::run_plan_sequential(black_box(&plan)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, sweep_drivers);
criterion_main!(benches);
