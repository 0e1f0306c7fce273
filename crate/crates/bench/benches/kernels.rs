use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfg_reflect::best_response::solve_best_response;
use mfg_reflect::dynamics::{simulate_pool, static_initial_flow, ConstantControl, NoiseStream, Purpose};
use mfg_reflect::transport::{w2_assignment, EmpiricalMeasure, Euclidean, StateControl};
use mfg_reflect::{skorokhod_map, Path as GridPath, ScenarioSpec, TimeGrid};

fn lq() -> ScenarioSpec {
    ScenarioSpec::from_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/lq.toml")).unwrap()
}

fn bench_skorokhod(c: &mut Criterion) {
    let mut g = c.benchmark_group("skorokhod_map");
    for k in [50usize, 1000, 100_000] {
        let grid = TimeGrid::new(1.0, k).unwrap();
        let mut noise = NoiseStream::new(1, k as u64, Purpose::Brownian);
        let mut acc = 0.0;
        let f: Vec<f64> = std::iter::once(0.0)
            .chain(noise.increments(k, grid.dt()).into_iter().map(|d| {
                acc += d;
                acc
            }))
            .collect();
        let f = GridPath::new(grid, f).unwrap();
        let a = GridPath::constant(grid, -0.1).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| b.iter(|| skorokhod_map(black_box(&a), black_box(&f))));
    }
    g.finish();
}

fn bench_assignment(c: &mut Criterion) {
    let mut g = c.benchmark_group("w2_assignment");
    g.sample_size(10);
    for n in [100usize, 500, 1000] {
        let mut noise = NoiseStream::new(2, n as u64, Purpose::Initial);
        let mut measure = || {
            EmpiricalMeasure::new((0..n).map(|_| StateControl { x: noise.uniform(), u: noise.uniform() }).collect())
                .unwrap()
        };
        let (mu, nu) = (measure(), measure());
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| w2_assignment(black_box(&mu), black_box(&nu), &Euclidean, 4096))
        });
    }
    g.finish();
}

fn bench_pool(c: &mut Criterion) {
    let spec = lq();
    let flow = static_initial_flow(&spec, 100, 1).unwrap();
    let mut g = c.benchmark_group("simulate_pool");
    g.sample_size(10);
    g.bench_function("lq_M2000_K50", |b| {
        b.iter(|| simulate_pool(&spec, &ConstantControl(40), black_box(&flow), 2000, 3))
    });
    g.finish();
}

fn bench_best_response(c: &mut Criterion) {
    let spec = lq();
    let flow = static_initial_flow(&spec, 100, 1).unwrap();
    let mut g = c.benchmark_group("solve_best_response");
    g.sample_size(10);
    g.bench_function("lq_K50", |b| b.iter(|| solve_best_response(&spec, black_box(&flow))));
    g.finish();
}

criterion_group!(benches, bench_skorokhod, bench_assignment, bench_pool, bench_best_response);
criterion_main!(benches);
