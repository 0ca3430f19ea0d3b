//! Default rayon pool against a single worker. Build with
//! `--no-default-features` to time the plain sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

use soid::asymptotics::{projections, simulate_limit, Regime};
use soid::exec;
use soid::models::{make_synthetic, SyntheticModelSpec};
use soid::montecarlo::{run_plan, McPlan, ModelConfig};

fn limit_draws(c: &mut Criterion) {
    let model = make_synthetic(&SyntheticModelSpec::over3()).unwrap();
    let bundle = model.population_bundle(DMatrix::identity(3, 3));
    let ps = projections(&bundle.d, &bundle.g, &bundle.w).unwrap();
    let v = model.population_v();
    let mut group = c.benchmark_group("simulate_limit_100k");
    group.sample_size(10);
    for threads in [None, Some(1)] {
        let label = threads.map_or("pool".to_string(), |n| format!("{n}_thread"));
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &threads| {
            b.iter(|| {
                exec::with_threads(threads, || {
                    simulate_limit(&bundle, &ps, &v, Regime::SecondOrderOveridentified, 100_000, 1).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn replications(c: &mut Criterion) {
    let mut plan = McPlan::new(ModelConfig::Synthetic(SyntheticModelSpec::exact2()), vec![500, 2000], 100, 1);
    plan.limit_draws = 5_000;
    let mut group = c.benchmark_group("mc_exact2_200_reps");
    group.sample_size(10);
    for threads in [None, Some(1)] {
        let label = threads.map_or("pool".to_string(), |n| format!("{n}_thread"));
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &threads| {
            b.iter(|| exec::with_threads(threads, || run_plan(&plan).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, limit_draws, replications);
criterion_main!(benches);
