use cep_core::pipeline::{compare_adaptive_fixed, run_pipeline, verify_run, RunConfig};
use cep_core::model::default_instance;
use cep_core::sampling::{sample_plans, OrderPolicy};
use cep_core::surrogate::TrainConfig;
use cep_core::{Error, Executor};

fn smoke(dir: &std::path::Path, workers: usize) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        workers,
        samples: 10,
        train: TrainConfig { max_epochs: 30, ..TrainConfig::default() },
        ..RunConfig::default()
    }
}

#[test]
fn smoke_run_is_complete_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_pipeline(&smoke(a.path(), 1)).unwrap();
    let rb = run_pipeline(&smoke(b.path(), 3)).unwrap();
    let ma = ra.manifest.unwrap();
    let mb = rb.manifest.unwrap();
    for f in [
        "instance.toml",
        "plans/sampled.csv",
        "dataset/labels.csv",
        "dataset/label_periods.csv",
        "models/a-linear.json",
        "models/a-mlp.json",
        "plans/a-linear.json",
        "plans/a-mlp.json",
        "reports/trajectory.csv",
        "reports/summary.json",
    ] {
        assert!(ma.entry(f).is_some(), "{f} missing from manifest");
        assert!(a.path().join(f).is_file(), "{f} missing on disk");
    }
    assert_eq!(ma.reproducible_hashes(), mb.reproducible_hashes());
    assert!(verify_run(a.path()).unwrap().is_empty());
    assert_eq!(ra.plans.len(), 2);
}

#[test]
fn zero_budget_is_reported_as_budget_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { time_budget_s: Some(1e-9), ..smoke(dir.path(), 1) };
    match run_pipeline(&cfg) {
        Err(Error::Budget { stage, .. }) => assert_eq!(stage, "sampling"),
        other => panic!("expected a budget error, got {other:?}"),
    }
    // Artifacts written before the limit are kept.
    assert!(dir.path().join("plans/sampled.csv").is_file());
    assert!(dir.path().join("manifest.json").is_file());
}

#[test]
fn largest_grid_cell_is_its_own_reference() {
    let inst = default_instance();
    let ex = Executor::sequential();
    let plan = sample_plans(1, inst.polytope(), 3, OrderPolicy::Random, &ex).unwrap().plans.remove(0);
    let r = compare_adaptive_fixed(&inst, &plan, 0, &[2, 4], &[6, 12], &Default::default(), &ex).unwrap();
    let last = r.grid.iter().find(|c| c.scenarios == Some(4) && c.horizon == Some(12)).unwrap();
    assert_eq!(last.relative_error, 0.0);
    assert_eq!(r.to_csv().lines().count(), 6);
}
