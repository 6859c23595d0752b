//! Sequential executor vs a rayon pool on the two hot loops: labeling a batch
//! of plans and scoring one plan out of sample.
//!
//! Without the `parallel` feature both variants run on the calling thread.

use std::time::Duration;

use cep_core::baselines::ScenarioSet;
use cep_core::evaluate::score_plan;
use cep_core::labeling::{label_plans, LabelConfig};
use cep_core::model::default_instance;
use cep_core::optimize::SimplexSolver;
use cep_core::sampling::{sample_plans, OrderPolicy};
use cep_core::scenarios::Namespace;
use cep_core::Executor;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn executors() -> Vec<(&'static str, Executor)> {
    let threads = std::thread::available_parallelism().map_or(2, |n| n.get().max(2));
    vec![("sequential", Executor::sequential()), ("parallel", Executor::with_threads(threads))]
}

fn labeling(c: &mut Criterion) {
    let inst = default_instance();
    let solver = SimplexSolver::default();
    let plans = sample_plans(8, inst.polytope(), 1, OrderPolicy::Random, &Executor::sequential()).unwrap().plans;
    let cfg = LabelConfig::default();
    let mut group = c.benchmark_group("label_8_plans");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| label_plans(&inst, &plans, 0, &cfg, &solver, exec).unwrap())
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let inst = default_instance();
    let solver = SimplexSolver::default();
    let plan = sample_plans(1, inst.polytope(), 2, OrderPolicy::Random, &Executor::sequential()).unwrap().plans.remove(0);
    let set = ScenarioSet::generate(&inst, 64, 18, Namespace::Validation, 0, &Executor::sequential()).unwrap();
    let mut group = c.benchmark_group("score_64_scenarios");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| score_plan(&inst, &plan, &set, &solver, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, labeling, scoring);
criterion_main!(benches);
