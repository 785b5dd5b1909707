use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hwmimo_bench::{default_network, impaired};
use hwmimo_core::estimation::{lmmse_estimates, EstimatorContext};
use hwmimo_core::linalg::{CMat, Cholesky, C64};
use hwmimo_core::montecarlo::engine::{self, EnginePlan, HardwareSpec, TSampling};
use hwmimo_core::montecarlo::{DistortionMoment, FilterKind};
use hwmimo_core::rates::NetworkCurves;
use hwmimo_core::synth::Realization;

fn closed_form(c: &mut Criterion) {
    let cfg = default_network(100, impaired());
    let ns: Vec<f64> = (0..19).map(|i| 10f64.powf(i as f64 / 3.0)).collect();
    c.bench_function("closed_form/network_curves", |b| {
        b.iter(|| NetworkCurves::new(&EstimatorContext::new(black_box(&cfg)).unwrap()).unwrap())
    });
    let curves = NetworkCurves::new(&EstimatorContext::new(&cfg).unwrap()).unwrap();
    c.bench_function("closed_form/sweep_19_points", |b| {
        b.iter(|| ns.iter().map(|&n| curves.sum_rate(black_box(n))).sum::<f64>())
    });
}

fn hermitian_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("cholesky_solve");
    for n in [8, 64, 500] {
        let g = CMat::from_fn(n, n, |r, k| C64::new(((r * 7 + k * 3) % 11) as f64, ((r + 2 * k) % 5) as f64 - 2.0));
        let mut a = g.matmul(&g.adjoint());
        a.add_diagonal(n as f64);
        let rhs: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| Cholesky::new(black_box(&a)).unwrap().solve(black_box(&rhs)))
        });
    }
    group.finish();
}

fn estimation(c: &mut Criterion) {
    let cfg = default_network(100, impaired());
    let ctx = EstimatorContext::new(&cfg).unwrap();
    let real = Realization::draw(&cfg, 1, 0).unwrap();
    c.bench_function("estimation/all_users_one_bs", |b| {
        b.iter(|| lmmse_estimates(black_box(&real.y_pilot[0]), &ctx, 0, 300).unwrap())
    });
}

fn monte_carlo(c: &mut Criterion) {
    let cfg = default_network(1, impaired());
    let mut group = c.benchmark_group("engine");
    group.sample_size(10);
    for filter in [FilterKind::Mrc, FilterKind::ApproxMmse] {
        let plan = EnginePlan {
            trials: 8,
            batches: 2,
            seed: 3,
            antennas: vec![100],
            hardware: vec![HardwareSpec::Fixed(impaired())],
            filters: vec![filter],
            t_sampling: TSampling::Explicit(vec![254]),
            distortion: DistortionMoment::Conditional,
            per_pair: false,
            stations: None,
        };
        group.bench_function(BenchmarkId::new("8_trials_n100", filter), |b| {
            b.iter(|| engine::run(black_box(&cfg), &plan).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, closed_form, hermitian_solve, estimation, monte_carlo);
criterion_main!(benches);
