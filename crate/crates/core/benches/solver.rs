//! Sequential against parallel execution for the batch operations.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fairroute::casegen::{generate, CaseSpec};
use fairroute::fairsolver::{check_alpha_fairness, solve_fair, solve_many, FairProblem, SolverConfig};
use fairroute::riskmeasures::{violation_levels, RiskKind, RiskSpec, ScenarioSet};
use fairroute::ExecMode;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn problem(spec: &CaseSpec, kind: RiskKind, max_iters: usize) -> FairProblem {
    let case = generate(spec).expect("case generates");
    let risk = RiskSpec::new(kind, 0.5, 0.1).unwrap();
    let config = SolverConfig {
        max_iters,
        ..SolverConfig::default()
    };
    FairProblem::new(case.network, case.scenarios, risk, 1.0, config).unwrap()
}

fn bench_violation_levels(c: &mut Criterion) {
    let prob = problem(&CaseSpec::with_seed(7), RiskKind::Cvar, 10);
    let (sol, _) = solve_fair(&prob).unwrap();
    let nominal_c = &prob.scenarios.node_caps[0];
    let nominal_d = &prob.scenarios.link_caps[0];
    let n = 512;
    let scale = |v: &[f64], i: usize| v.iter().map(|x| x * (0.5 + i as f64 / n as f64)).collect::<Vec<_>>();
    let sc = ScenarioSet::new(
        (0..n).map(|i| scale(nominal_c, i)).collect(),
        (0..n).map(|i| scale(nominal_d, i)).collect(),
        vec![1.0 / n as f64; n],
    )
    .unwrap();
    let mut group = c.benchmark_group("violation_levels");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new(name, n), |b| {
            b.iter(|| violation_levels(&prob.incidence.k, black_box(&sol.y), &sc, mode).unwrap())
        });
    }
    group.finish();
}

fn bench_fairness_check(c: &mut Criterion) {
    let prob = problem(&CaseSpec::random_small(3), RiskKind::Tv, 200);
    let (sol, _) = solve_fair(&prob).unwrap();
    let m = 32;
    let mut group = c.benchmark_group("fairness_check");
    group.sample_size(10);
    for (name, mode) in MODES {
        let p = prob.with_config(SolverConfig { exec: mode, ..prob.config });
        group.bench_function(BenchmarkId::new(name, m), |b| {
            b.iter(|| check_alpha_fairness(black_box(&sol.x), &p, m, 1, None).unwrap())
        });
    }
    group.finish();
}

fn bench_solve_many(c: &mut Criterion) {
    let problems: Vec<FairProblem> = (0..8)
        .map(|s| problem(&CaseSpec::random_small(s), RiskKind::Cvar, 50))
        .collect();
    let mut group = c.benchmark_group("solve_many");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new(name, problems.len()), |b| {
            b.iter(|| solve_many(black_box(&problems), mode))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_violation_levels, bench_fairness_check, bench_solve_many);
criterion_main!(benches);
