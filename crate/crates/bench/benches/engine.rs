use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DMatrix;
use resopt_core::*;
use std::hint::black_box;

fn market() -> MarketModel {
    MarketModel::new(0.5, 100f64.ln(), 0.5, 0.05).unwrap()
}

fn prior() -> PriorSpec {
    PriorSpec {
        mu: 10.0,
        sigma0_sq: 2.25,
        sigma_tp_sq: 1.875,
        t_prime: 2.0,
        m: 31,
        n_sigmas: 4.0,
    }
}

fn problem(n_points: usize, intervals: usize) -> PricingProblem {
    let mk = market();
    let (tech, _) = calibrate(&prior(), LearningMode::Calibrated).unwrap();
    let plan = ExtractionPlan::new(1.0, 0.05, 0.9, 2.0, 0.0)
        .unwrap()
        .with_volume_scale(1.8e5)
        .unwrap();
    let grid = GridSpec::for_market(&mk, n_points, GridSpec::uniform_dates(5.0, intervals)).unwrap();
    PricingProblem::new(mk, plan, CostModel::new(1e8, 3e6).unwrap(), tech, grid).unwrap()
}

fn calibration(c: &mut Criterion) {
    c.bench_function("calibrate m=31", |b| {
        b.iter(|| calibrate(black_box(&prior()), LearningMode::Calibrated).unwrap())
    });
    let (tech, _) = calibrate(&prior(), LearningMode::Calibrated).unwrap();
    c.bench_function("limit_transition m=31", |b| {
        b.iter(|| limit_transition(black_box(0.7), &tech).unwrap())
    });
}

fn stepping(c: &mut Criterion) {
    let p = problem(4096, 255);
    let xs = p.grid.x_grid();
    let values = DMatrix::from_fn(4096, 31, |i, j| (xs[i] + 0.01 * j as f64).exp());
    let mut prop = Propagator::new(&p.market, &p.grid).unwrap().lenient();
    let dt = 5.0 / 255.0;
    c.bench_function("propagate N=4096 m=31", |b| {
        b.iter(|| prop.propagate(black_box(&values), 1.0, 1.0 + dt, &p.tech).unwrap())
    });
    let payoff = PayoffTable::new(&p.market, &p.plan, &p.costs, &p.tech, &xs, 64).unwrap();
    c.bench_function("exercise values N=4096 m=31", |b| {
        b.iter(|| payoff.exercise(black_box(1.0), &p.tech).unwrap())
    });
}

fn solving(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    let small = problem(1024, 51);
    group.bench_function("N=1024 dates=52", |b| b.iter(|| solve(black_box(&small)).unwrap()));
    let full = problem(4096, 255);
    group.bench_function("N=4096 dates=256 with boundary", |b| {
        b.iter_batched(
            || (),
            |_| {
                let s = solve(&full).unwrap();
                extract_boundary(&s, &full).unwrap()
            },
            BatchSize::PerIteration,
        )
    });
    group.finish();
}

criterion_group!(benches, calibration, stepping, solving);
criterion_main!(benches);
