//! Parallel vs sequential executor on the path simulator and the regression
//! BSDE solver. Without the `parallel` feature both arms run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use neumann_lab::bsde::{solve_finite_horizon, BsdeConfig, NeumannProblem};
use neumann_lab::exec::Exec;
use neumann_lab::sde::{simulate, SimConfig, TimeGrid};

const EXECS: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn reflected_paths(c: &mut Criterion) {
    let p = NeumannProblem::benchmark();
    let grid = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
    let mut g = c.benchmark_group("reflected_paths");
    g.sample_size(10);
    for n_paths in [2_000, 20_000] {
        for (name, exec) in EXECS {
            let cfg = SimConfig { n_paths, seed: 1, exec, ..Default::default() };
            g.bench_with_input(BenchmarkId::new(name, n_paths), &cfg, |b, cfg| {
                b.iter(|| black_box(simulate(&p.coeffs, &[0.0], &grid, cfg).unwrap()))
            });
        }
    }
    g.finish();
}

fn regression_bsde(c: &mut Criterion) {
    let p = NeumannProblem::benchmark();
    let mut g = c.benchmark_group("regression_bsde");
    g.sample_size(10);
    for (name, exec) in EXECS {
        let cfg = BsdeConfig { n_paths: 10_000, n_steps: 50, seed: 1, exec, ..Default::default() };
        g.bench_function(name, |b| b.iter(|| black_box(solve_finite_horizon(&p, 1.0, &[0.0], &cfg).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, reflected_paths, regression_bsde);
criterion_main!(benches);
