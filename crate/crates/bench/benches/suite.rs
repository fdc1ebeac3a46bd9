//! Criterion benchmarks for the hot paths: the EM kernel itself, the
//! finite-difference spectral machinery, and full accelerated solves.
//!
//! Run with `cargo bench -p relaxem-bench`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use relaxem::{
    builtin_scenarios, energy_decompose, fisher_triple, generate_dataset, jacobian_fd,
    relaxation_analysis, run_method, solve_fixed_point, EmProblem, GmmParams, GmmProblem, Method,
    MethodConfig, ParamVector, StopRule, DT_FD_STEP,
};

fn sample_problem(n: usize) -> GmmProblem {
    let truth = GmmParams::new(0.4, vec![0.0, 2.0], vec![1.0, 1.5]).unwrap();
    GmmProblem::new(generate_dataset(&truth, n, 42))
}

fn start() -> ParamVector {
    ParamVector(vec![0.5, -0.5, 1.5, 0.5, 1.5])
}

/// One EM update and one log-likelihood pass, across dataset sizes. Both are
/// O(n) and dominate everything else, so time per element is the figure of merit.
fn bench_kernel(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel");
    for &n in &[100usize, 1_000, 10_000] {
        let problem = sample_problem(n);
        let theta = start();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("em_step", n), &problem, |b, p| {
            b.iter(|| p.em_step(black_box(&theta)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("log_likelihood", n), &problem, |b, p| {
            b.iter(|| p.log_likelihood(black_box(&theta)))
        });
        group.bench_with_input(BenchmarkId::new("energy_decompose", n), &problem, |b, p| {
            b.iter(|| energy_decompose(p, black_box(&theta)).unwrap())
        });
    }
    group.finish();
}

/// Finite-difference Jacobian, Fisher triple, and the eigensolve that turns them
/// into rates. Measured at a fixed point of a mid-sized dataset, which is how
/// they are used in practice.
fn bench_spectral(c: &mut Criterion) {
    let problem = sample_problem(500);
    let star = solve_fixed_point(&problem, &start()).unwrap();
    let theta = star.iterates.last().unwrap().clone();
    let dt = jacobian_fd(&problem, &theta, DT_FD_STEP).unwrap();
    let triple = fisher_triple(&problem, &theta).unwrap();

    let mut group = c.benchmark_group("spectral");
    group.bench_function("jacobian_fd", |b| {
        b.iter(|| jacobian_fd(&problem, black_box(&theta), DT_FD_STEP).unwrap())
    });
    group.bench_function("fisher_triple", |b| {
        b.iter(|| fisher_triple(&problem, black_box(&theta)).unwrap())
    });
    group.bench_function("relaxation_analysis", |b| {
        b.iter(|| relaxation_analysis(black_box(&dt), black_box(&triple)).unwrap())
    });
    group.finish();
}

/// Full solves of one catalog scenario under each method, to the production
/// stopping rule. This is the end-to-end cost a benchmark trial pays.
fn bench_solvers(c: &mut Criterion) {
    let scenario = builtin_scenarios()
        .into_iter()
        .find(|s| s.name == "UnequalVar")
        .expect("catalog scenario");
    let problem = GmmProblem::new(generate_dataset(
        &scenario.true_params,
        scenario.n_samples,
        scenario.base_seed,
    ));
    let stop = StopRule::new(scenario.tol, scenario.max_iter);
    let theta0 = scenario.theta0.clone();

    let mut group = c.benchmark_group("solve");
    for method in Method::ALL {
        let cfg = MethodConfig::new(method);
        group.bench_function(method.name(), |b| {
            b.iter(|| run_method(&problem, black_box(&theta0), &stop, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_kernel, bench_spectral, bench_solvers);
criterion_main!(benches);
