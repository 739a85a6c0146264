use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fastslow::ldp::RateSolver;
use fastslow::montecarlo::{ensemble_paths, InitialDensity};
use fastslow::rng::CounterRng;
use fastslow::standardpairs::{
    pushforward_decompose, PairBounds, PairConfig, StandardFamily, StandardPair, TorusPotential,
};
use fastslow::system::simulate_dithered;
use fastslow::transfer::{chi_hat, eigentriple_for, uni_estimate};
use fastslow::{Discretization, OperatorSpec, Potential, TrajectoryState};
use fastslow_bench::{doubling, perturbed, tables, FOURIER};
use num_complex::Complex64;
use std::hint::black_box;

fn transfer(c: &mut Criterion) {
    let sys = perturbed(1e-3);
    let mut g = c.benchmark_group("transfer");
    for n in [64, 128, 256] {
        let spec = OperatorSpec {
            theta: 0.3,
            potential: Potential::Zero,
            discretization: Discretization::Fourier { modes: n },
        };
        g.bench_with_input(BenchmarkId::new("eigentriple_fourier", n), &spec, |b, s| {
            b.iter(|| eigentriple_for(&sys, black_box(s)).unwrap())
        });
    }
    g.bench_function("chi_hat_ulam_4096", |b| {
        b.iter(|| chi_hat(&sys, 0.3, black_box(&[0.5]), Discretization::Ulam { cells: 4096 }).unwrap())
    });
    g.bench_function("uni_n8", |b| b.iter(|| uni_estimate(&sys, black_box(0.3), 8).unwrap()));
    g.finish();
}

fn rates(c: &mut Criterion) {
    let sys = doubling(1e-3);
    c.bench_function("rate_z_solve", |b| {
        b.iter(|| {
            let solver = RateSolver::new(&sys, 0.5, FOURIER).unwrap();
            solver.rate(black_box(&[0.15])).unwrap()
        })
    });
}

fn trajectories(c: &mut Criterion) {
    let sys = doubling(1e-4);
    c.bench_function("simulate_dithered_1e5", |b| {
        b.iter(|| {
            let mut rng = CounterRng::new(7, 0);
            simulate_dithered(&sys, &TrajectoryState::new(&sys, 0.3, 0.5), 100_000, &mut rng).unwrap()
        })
    });
    let sys = doubling(1e-3);
    c.bench_function("averaged_tables_build", |b| b.iter(|| tables(black_box(&sys))));
    c.bench_function("ensemble_1000_paths_t1", |b| {
        b.iter(|| ensemble_paths(&sys, 0.25, &InitialDensity::Uniform, 1.0, 1000, black_box(3), 1e-2).unwrap())
    });
}

fn pairs(c: &mut Criterion) {
    let sys = perturbed(1e-3);
    let phi = TorusPotential::new(|x, _| Complex64::new(0.1 * (2.0 * std::f64::consts::PI * x).cos(), 0.0));
    let bounds = PairBounds::for_system(&sys, std::slice::from_ref(&phi), false, &PairConfig::default());
    let fam = StandardFamily::single(StandardPair::flat(0.1, 0.1 + bounds.delta, 0.4).unwrap(), bounds);
    c.bench_function("pushforward_decompose", |b| {
        b.iter(|| pushforward_decompose(black_box(&fam), &phi, &sys).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = transfer, rates, trajectories, pairs
}
criterion_main!(benches);
