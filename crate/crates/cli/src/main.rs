//! `cep`: command-line front end for the surrogate planning pipeline.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 stage failure,
//! 4 time budget exceeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cep_core::baselines::{extensive_form, progressive_hedging, PhConfig, ScenarioSet};
use cep_core::embedding::{embed, solve_plan_with};
use cep_core::evaluate::{trajectory_csv, ValidationReport};
use cep_core::io::{self, LabelRow};
use cep_core::labeling::{fixed_label, label_plans, LabelConfig};
use cep_core::model::{
    default_instance, instance_to_toml, load_instance, synthetic_instance, InvestmentPlan, PlanningInstance,
    SyntheticConfig,
};
use cep_core::optimize::{MilpOptions, SimplexSolver};
use cep_core::pipeline::{bench_table, compare_adaptive_fixed, run_pipeline, verify_run, PlanRecord, RunConfig};
use cep_core::sampling::{sample_plans, OrderPolicy};
use cep_core::scenarios::Namespace;
use cep_core::surrogate::{fit_linear, fit_mlp, mape, Dataset, ModelFile, Split, Surrogate, TrainConfig};
use cep_core::{Error, Executor};

#[derive(Parser)]
#[command(name = "cep", version, about = "Surrogate-based stochastic capacity expansion planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Instance file (TOML); the built-in 3-node instance when omitted.
    #[arg(long, global = true)]
    instance: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instance.
    GenInstance {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        nodes: usize,
        /// Comma-separated period start years.
        #[arg(long, value_delimiter = ',', default_values_t = [2020, 2025, 2030])]
        periods: Vec<i32>,
        #[arg(long)]
        no_lines: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample feasible investment plans.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Order::Random)]
        order: Order,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label plans with adaptive (or fixed-size) expected-cost estimates.
    Label {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Label settings (TOML); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sample id of the first plan.
        #[arg(long, default_value_t = 0)]
        first_id: u64,
        /// Fixed scenario count instead of the adaptive method (needs --fixed-horizon).
        #[arg(long, requires = "fixed_horizon")]
        fixed_scenarios: Option<usize>,
        #[arg(long, requires = "fixed_scenarios")]
        fixed_horizon: Option<usize>,
    },
    /// Fit a surrogate to a labeled dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
        /// Training settings (TOML); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Embed a trained surrogate and solve for a plan.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the LP/MILP in MPS format.
        #[arg(long)]
        mps: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        gap: f64,
        #[arg(long)]
        time_limit: Option<f64>,
        /// Stop branch and bound after this many nodes (reproducible, unlike --time-limit).
        #[arg(long)]
        node_limit: Option<usize>,
    },
    /// Solve the extensive form over a sampled scenario set.
    Ef {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        set: SetArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        time_limit: Option<f64>,
    },
    /// Run progressive hedging over a sampled scenario set.
    Ph {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        set: SetArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        max_iterations: usize,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        /// Per-subproblem time limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
    },
    /// Score a plan on out-of-sample scenarios.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Plan file written by plan, ef or ph.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 1000)]
        scenarios: usize,
        #[arg(long, default_value_t = 18)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Plan whose score on the same scenarios is the gap reference.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Capacity trajectory as CSV (period, technology, mw).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Full pipeline plus baselines and a method comparison table.
    Bench {
        /// Run configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// Wall-clock budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
        /// Skip the baselines and validation.
        #[arg(long)]
        no_baselines: bool,
    },
    /// Check a run directory against its manifest.
    Verify {
        dir: PathBuf,
    },
    /// Label one plan on a grid of fixed settings and adaptively.
    CompareAdaptiveFixed {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Which sampled plan to use.
        #[arg(long, default_value_t = 0)]
        plan_index: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20, 30])]
        scenarios: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [6, 12, 24, 48])]
        horizons: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct SetArgs {
    #[arg(long)]
    scenarios: usize,
    #[arg(long, default_value_t = 18)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    Random,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Linear,
    Mlp,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

fn input(e: Error) -> Failure {
    Failure { code: 2, error: e }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error.root() {
            Error::Budget { .. } => 4,
            Error::InvalidConfig(_) => 2,
            _ => 3,
        };
        Failure { code, error }
    }
}

type CliResult = Result<(), Failure>;

fn instance(common: &Common) -> Result<PlanningInstance, Failure> {
    match &common.instance {
        Some(p) => load_instance(p).map_err(input),
        None => Ok(default_instance()),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| input(e.into()))
}

fn write(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Error::from)?;
    }
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn toml_or_default<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, Failure> {
    match path {
        Some(p) => toml::from_str(&read(p)?).map_err(|e| input(Error::InvalidConfig(e.to_string()))),
        None => Ok(T::default()),
    }
}

fn read_plan(path: &Path) -> Result<PlanRecord, Failure> {
    io::from_json("plan", &read(path)?).map_err(input)
}

fn secs(s: Option<f64>) -> Result<Option<Duration>, Failure> {
    match s {
        Some(v) if !(v > 0.0) => Err(input(Error::InvalidConfig(format!("time limit must be positive, got {v}")))),
        other => Ok(other.map(Duration::from_secs_f64)),
    }
}

fn run(cli: Cli) -> CliResult {
    let solver = SimplexSolver::default();
    match cli.command {
        Command::GenInstance { out, nodes, periods, no_lines, seed } => {
            let mut cfg = SyntheticConfig { nodes, periods, lines: !no_lines, ..SyntheticConfig::default() };
            if let Some(s) = seed {
                cfg.scenario.seed = s;
            }
            let spec = synthetic_instance(&cfg);
            PlanningInstance::new(spec.clone()).map_err(input)?;
            write(&out, &instance_to_toml(&spec)?)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Sample { common, count, seed, order, out } => {
            let inst = instance(&common)?;
            let order = match order {
                Order::Random => OrderPolicy::Random,
                Order::Fixed => OrderPolicy::Fixed,
            };
            let set = sample_plans(count, inst.polytope(), seed, order, &Executor::with_threads(common.workers))?;
            write(&out, &io::plans_to_csv(&inst, &set.plans)?)?;
            println!(
                "{{\"plans\": {}, \"empty_intervals\": {}, \"rejected\": {}, \"guaranteed\": {}}}",
                set.plans.len(),
                set.empty_intervals,
                set.rejected,
                set.guaranteed
            );
        }
        Command::Label { common, plans, out, config, first_id, fixed_scenarios, fixed_horizon } => {
            let inst = instance(&common)?;
            let plans = io::plans_from_csv(&inst, &read(&plans)?).map_err(input)?;
            let exec = Executor::with_threads(common.workers);
            let labels = match (fixed_scenarios, fixed_horizon) {
                (Some(s), Some(h)) => {
                    let inner = Executor::sequential();
                    exec.try_map(plans.len(), |k| fixed_label(&inst, &plans[k], first_id + k as u64, s, h, &solver, &inner))?
                }
                _ => {
                    let cfg: LabelConfig = toml_or_default(&config)?;
                    cfg.validate().map_err(input)?;
                    label_plans(&inst, &plans, first_id, &cfg, &solver, &exec)?
                }
            };
            let rows: Vec<LabelRow> = labels.iter().map(LabelRow::from).collect();
            write(&out, &io::labels_to_csv(&inst, &rows)?)?;
            let total: f64 = labels.iter().map(|l| l.wall_time_s).sum();
            println!("{{\"labels\": {}, \"label_seconds\": {total}}}", labels.len());
        }
        Command::Train { common, labels, model, out, config, seed } => {
            let inst = instance(&common)?;
            let rows = io::labels_from_csv(&inst, &read(&labels)?).map_err(input)?;
            let mut cfg: TrainConfig = toml_or_default(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(input)?;
            let x = rows.iter().map(|r| r.plan.x.clone()).collect();
            let y = rows.iter().map(|r| r.label).collect();
            let data = Dataset::new(x, y, cfg.val_fraction, cfg.seed).map_err(input)?;
            let file = match model {
                ModelKind::Linear => ModelFile::new(Surrogate::Linear(fit_linear(&data)?), None),
                ModelKind::Mlp => {
                    let (m, curve) = fit_mlp(&data, &cfg)?;
                    ModelFile::new(Surrogate::Mlp(m), Some(curve))
                }
            };
            let split = if data.validation.is_empty() { Split::Train } else { Split::Validation };
            let err = mape(|x| file.model.predict(x), &data, split)?;
            write(&out, &file.to_json()?)?;
            println!("{{\"model\": \"{}\", \"validation_mape_percent\": {err}}}", file.model.name());
        }
        Command::Plan { common, model, out, mps, gap, time_limit, node_limit } => {
            let inst = instance(&common)?;
            let file = ModelFile::from_json(&read(&model)?).map_err(input)?;
            let problem = embed(&file.model, inst.polytope(), &inst.investment_costs())?;
            if let Some(p) = &mps {
                write(p, &problem.to_mps(file.model.name()))?;
            }
            let opts = MilpOptions { gap_tol: gap, time_limit: secs(time_limit)?, max_nodes: node_limit, ..MilpOptions::default() };
            let sol = solve_plan_with(&problem, inst.polytope(), &opts)?;
            let wall = sol.wall_time_s;
            let rec = PlanRecord { method: format!("a-{}", file.model.name()), plan: sol.plan.clone(), objective: sol.objective, surrogate: Some(sol) };
            let text = io::to_json("plan", &rec)?;
            write(&out, &text)?;
            print!("{text}");
            eprintln!("solved in {wall:.2} s");
        }
        Command::Ef { common, set, out, time_limit } => {
            let inst = instance(&common)?;
            let exec = Executor::with_threads(common.workers);
            let s = ScenarioSet::generate(&inst, set.scenarios, set.horizon, Namespace::Baseline, set.seed, &exec).map_err(input)?;
            let solver = SimplexSolver { time_limit: secs(time_limit)?, ..SimplexSolver::default() };
            let sol = extensive_form(&inst, &s, &solver)?;
            let rec = PlanRecord { method: format!("ef({})", set.scenarios), plan: sol.plan.clone(), objective: sol.objective, surrogate: None };
            let text = io::to_json("plan", &rec)?;
            write(&out, &text)?;
            print!("{text}");
            eprintln!("solved in {:.2} s", sol.wall_time_s);
        }
        Command::Ph { common, set, out, max_iterations, tolerance, time_limit } => {
            let inst = instance(&common)?;
            let exec = Executor::with_threads(common.workers);
            let s = ScenarioSet::generate(&inst, set.scenarios, set.horizon, Namespace::Baseline, set.seed, &exec).map_err(input)?;
            let cfg = PhConfig { max_iterations, tolerance, subproblem_time_limit: secs(time_limit)?, ..PhConfig::default() };
            let sol = progressive_hedging(&inst, &s, &cfg, &solver, &exec)?;
            for (k, r) in sol.residuals.iter().enumerate() {
                eprintln!("iteration {k}: residual {r:.3e}");
            }
            if !sol.converged {
                eprintln!("warning: iteration cap reached with residual {:.3e}", sol.residuals.last().unwrap_or(&f64::NAN));
            }
            if sol.projected {
                eprintln!("note: averaged plan was projected onto the feasible set");
            }
            let rec = PlanRecord { method: format!("ph({})", set.scenarios), plan: sol.plan.clone(), objective: sol.objective, surrogate: None };
            let text = io::to_json("plan", &rec)?;
            write(&out, &text)?;
            print!("{text}");
        }
        Command::Evaluate { common, plan, scenarios, horizon, seed, reference, out, trajectory } => {
            let inst = instance(&common)?;
            let exec = Executor::with_threads(common.workers);
            let rec = read_plan(&plan)?;
            let plan = InvestmentPlan::new(rec.plan.x);
            let set = ScenarioSet::generate(&inst, scenarios, horizon, Namespace::Validation, seed, &exec).map_err(input)?;
            let reference_cost = match &reference {
                Some(p) => {
                    let r = read_plan(p)?;
                    Some(ValidationReport::build("reference", &inst, &r.plan, &set, None, &solver, &exec)?.mean_cost)
                }
                None => None,
            };
            let report = ValidationReport::build(&rec.method, &inst, &plan, &set, reference_cost, &solver, &exec)?;
            let text = io::to_json("report", &report)?;
            write(&out, &text)?;
            if let Some(t) = &trajectory {
                write(t, &trajectory_csv(&report.trajectory))?;
            }
            print!("{text}");
        }
        Command::Bench { config, out_dir, workers, samples, budget, no_baselines } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::from_toml(&read(p)?).map_err(input)?,
                None => RunConfig::default(),
            };
            cfg.benchmark.enabled = !no_baselines;
            if let Some(d) = out_dir {
                cfg.output_dir = d;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(s) = samples {
                cfg.samples = s;
            }
            if budget.is_some() {
                cfg.time_budget_s = budget;
            }
            cfg.validate().map_err(input)?;
            let summary = run_pipeline(&cfg)?;
            if !summary.bench.is_empty() {
                print!("{}", bench_table(&summary.bench, cfg.benchmark.validation_scenarios, cfg.benchmark.horizon));
            }
            for (k, v) in &summary.timings {
                eprintln!("{k}: {v:.2} s");
            }
            eprintln!("artifacts in {}", summary.output_dir.display());
        }
        Command::Verify { dir } => {
            let bad = verify_run(&dir).map_err(input)?;
            if bad.is_empty() {
                println!("all files match the manifest");
            } else {
                for p in &bad {
                    println!("mismatch: {p}");
                }
                return Err(Failure { code: 3, error: Error::Format { what: "run directory".into(), message: format!("{} files differ from the manifest", bad.len()) } });
            }
        }
        Command::CompareAdaptiveFixed { common, seed, plan_index, scenarios, horizons, out } => {
            let inst = instance(&common)?;
            let exec = Executor::with_threads(common.workers);
            let set = sample_plans(plan_index + 1, inst.polytope(), seed, OrderPolicy::Random, &exec)?;
            let plan = &set.plans[plan_index];
            let report = compare_adaptive_fixed(&inst, plan, plan_index as u64, &scenarios, &horizons, &LabelConfig::default(), &exec)?;
            write(&out, &report.to_csv())?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
