//! End-to-end runs: sample, label, train, plan, and optionally benchmark
//! against the extensive form and progressive hedging on a common validation
//! set. Every output file is recorded in a hashed manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::baselines::{extensive_form, progressive_hedging, BaselineSolution, PhConfig, PhSolution, ScenarioSet};
use crate::embedding::{embed, solve_plan_with, PlanSolution};
use crate::error::{Error, Result};
use crate::evaluate::{capacity_trajectory, trajectory_csv, ValidationReport};
use crate::io::{self, ArtifactWriter, LabelRow, Manifest};
use crate::labeling::{adaptive_label, fixed_label, label_plans, LabelConfig, PeriodRecord};
use crate::model::{default_instance, instance_to_toml, load_instance, InvestmentPlan, PlanningInstance};
use crate::optimize::{MilpOptions, SimplexSolver, SolveStatus};
use crate::parallel::Executor;
use crate::sampling::{sample_plans, OrderPolicy};
use crate::scenarios::Namespace;
use crate::surrogate::{fit_linear, fit_mlp, mape, Dataset, ModelFile, Split, Surrogate, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub sampler: u64,
    /// Labels use sample ids `labeling * 2^32 + k`.
    pub labeling: u64,
    /// Dataset split, weight init and minibatch order. Overrides `train.seed`.
    pub training: u64,
    pub validation: u64,
    pub baseline: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { sampler: 1, labeling: 0, training: 0, validation: 0, baseline: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanningConfig {
    /// Relative MILP gap at which branch and bound stops.
    pub gap_tol: f64,
    pub time_limit_s: Option<f64>,
    /// Branch-and-bound node cap. Unlike the time limit, it cuts the search
    /// at the same point on every run.
    pub node_limit: Option<usize>,
    /// Also write the embedded problems in MPS format.
    pub export_mps: bool,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        PlanningConfig { gap_tol: 1e-4, time_limit_s: Some(60.0), node_limit: None, export_mps: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub enabled: bool,
    /// Scenarios per period for the extensive-form reference; 0 skips it.
    pub ef_scenarios: usize,
    /// Scenarios per period for progressive hedging; 0 skips it.
    pub ph_scenarios: usize,
    /// Operational horizon of baseline and validation scenarios.
    pub horizon: usize,
    pub validation_scenarios: usize,
    pub ph: PhConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let label = LabelConfig::default();
        BenchConfig {
            enabled: false,
            ef_scenarios: 50,
            ph_scenarios: 0,
            horizon: label.initial_horizon + 2 * label.horizon_step,
            validation_scenarios: 1000,
            ph: PhConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Instance file; the built-in synthetic instance when absent.
    pub instance: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub samples: usize,
    pub order: OrderPolicy,
    pub seeds: Seeds,
    pub label: LabelConfig,
    pub train: TrainConfig,
    pub planning: PlanningConfig,
    pub benchmark: BenchConfig,
    /// Wall-clock limit for the whole run, checked between stages.
    pub time_budget_s: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            instance: None,
            output_dir: PathBuf::from("run"),
            workers: 1,
            samples: 1000,
            order: OrderPolicy::Random,
            seeds: Seeds::default(),
            label: LabelConfig::default(),
            train: TrainConfig::default(),
            planning: PlanningConfig::default(),
            benchmark: BenchConfig::default(),
            time_budget_s: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.samples < 5 {
            return bad(format!("need at least 5 samples, got {}", self.samples));
        }
        if let Some(b) = self.time_budget_s {
            if !(b > 0.0) {
                return bad(format!("time budget must be positive, got {b}"));
            }
        }
        if let Some(t) = self.planning.time_limit_s {
            if !(t > 0.0) {
                return bad(format!("planning time limit must be positive, got {t}"));
            }
        }
        if !(self.planning.gap_tol >= 0.0) {
            return bad("planning gap tolerance must be nonnegative".into());
        }
        if let Some(p) = &self.instance {
            if !p.is_file() {
                return bad(format!("instance file {} not found", p.display()));
            }
        }
        let b = &self.benchmark;
        if b.enabled && (b.horizon == 0 || b.validation_scenarios < 2) {
            return bad("benchmark needs a positive horizon and at least 2 validation scenarios".into());
        }
        self.label.validate()?;
        self.training_config().validate()
    }

    pub fn training_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seeds.training, ..self.train.clone() }
    }

    pub fn load_instance(&self) -> Result<PlanningInstance> {
        match &self.instance {
            Some(p) => load_instance(p),
            None => Ok(default_instance()),
        }
    }

    pub fn executor(&self) -> Executor {
        Executor::with_threads(self.workers)
    }

    pub fn first_sample_id(&self) -> u64 {
        self.seeds.labeling << 32
    }
}

/// One line of the method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    /// Out-of-sample mean total cost.
    pub cost: f64,
    pub gap_percent: Option<f64>,
    pub cv_percent: f64,
    /// End-to-end seconds, data generation and training included.
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub method: String,
    pub plan: InvestmentPlan,
    /// Objective of the method's own model: surrogate prediction, EF or PH.
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<PlanSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub samples: usize,
    pub validation_mape: BTreeMap<String, f64>,
    pub plans: Vec<PlanRecord>,
    pub bench: Vec<BenchRow>,
    pub timings: BTreeMap<String, f64>,
    #[serde(skip)]
    pub manifest: Option<Manifest>,
}

struct Clock {
    start: Instant,
    budget: Option<f64>,
}

impl Clock {
    fn check(&self, stage: &str) -> Result<()> {
        let elapsed_s = self.start.elapsed().as_secs_f64();
        match self.budget {
            Some(b) if elapsed_s > b => Err(Error::Budget { stage: stage.to_string(), budget_s: b, elapsed_s }),
            _ => Ok(()),
        }
    }
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage));
    timings.insert(stage.to_string(), t0.elapsed().as_secs_f64());
    out
}

/// Runs every stage and writes the artifacts into `cfg.output_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let clock = Clock { start: Instant::now(), budget: cfg.time_budget_s };
    let exec = cfg.executor();
    let solver = SimplexSolver::default();
    let instance = cfg.load_instance()?;
    let config_json = serde_json::to_value(cfg).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = ArtifactWriter::create(&cfg.output_dir, config_json)?;
    {
        let s = &mut out.manifest.seeds;
        s.insert("sampler".into(), cfg.seeds.sampler);
        s.insert("labeling".into(), cfg.seeds.labeling);
        s.insert("training".into(), cfg.seeds.training);
        s.insert("validation".into(), cfg.seeds.validation);
        s.insert("baseline".into(), cfg.seeds.baseline);
        s.insert("scenario_base".into(), instance.spec().scenario.seed);
    }
    out.write("instance.toml", instance_to_toml(instance.spec())?.as_bytes(), true)?;
    let mut timings = BTreeMap::new();

    let samples = timed(&mut timings, "sampling", || {
        sample_plans(cfg.samples, instance.polytope(), cfg.seeds.sampler, cfg.order, &exec)
    })?;
    out.write("plans/sampled.csv", io::plans_to_csv(&instance, &samples.plans)?.as_bytes(), true)?;
    clock.check("sampling")?;

    let labels = timed(&mut timings, "labeling", || {
        label_plans(&instance, &samples.plans, cfg.first_sample_id(), &cfg.label, &solver, &exec)
    })?;
    let rows: Vec<LabelRow> = labels.iter().map(LabelRow::from).collect();
    out.write("dataset/labels.csv", io::labels_to_csv(&instance, &rows)?.as_bytes(), true)?;
    out.write("dataset/label_periods.csv", io::label_periods_csv(&labels)?.as_bytes(), true)?;
    clock.check("labeling")?;

    let tcfg = cfg.training_config();
    let data = Dataset::from_labels(&labels, tcfg.val_fraction, tcfg.seed).map_err(|e| e.in_stage("training"))?;
    let linear = timed(&mut timings, "training_linear", || fit_linear(&data))?;
    let (mlp, curve) = timed(&mut timings, "training_mlp", || fit_mlp(&data, &tcfg))?;
    let models = [
        ("a-linear", Surrogate::Linear(linear), None),
        ("a-mlp", Surrogate::Mlp(mlp), Some(curve)),
    ];
    let mut validation_mape = BTreeMap::new();
    for (name, model, curve) in &models {
        let split = if data.validation.is_empty() { Split::Train } else { Split::Validation };
        validation_mape.insert(name.to_string(), mape(|x| model.predict(x), &data, split)?);
        let file = ModelFile::new(model.clone(), curve.clone());
        out.write(&format!("models/{name}.json"), file.to_json()?.as_bytes(), true)?;
    }
    clock.check("training")?;

    let mut plans = Vec::new();
    let mut plans_reproducible = true;
    let milp = MilpOptions {
        gap_tol: cfg.planning.gap_tol,
        time_limit: cfg.planning.time_limit_s.map(Duration::from_secs_f64),
        max_nodes: cfg.planning.node_limit,
        ..MilpOptions::default()
    };
    for (name, model, _) in &models {
        let stage = format!("solve_{name}");
        let sol = timed(&mut timings, &stage, || {
            let problem = embed(model, instance.polytope(), &instance.investment_costs())?;
            if cfg.planning.export_mps {
                out.write(&format!("plans/{name}.mps"), problem.to_mps(name).as_bytes(), true)?;
            }
            solve_plan_with(&problem, instance.polytope(), &milp)
        })?;
        // A search cut short by the clock stops at a load-dependent node.
        let reproducible = !(milp.time_limit.is_some() && sol.status == SolveStatus::IterationLimit);
        plans_reproducible &= reproducible;
        let rec = PlanRecord { method: name.to_string(), plan: sol.plan.clone(), objective: sol.objective, surrogate: Some(sol) };
        out.write(&format!("plans/{name}.json"), io::to_json("plan", &rec)?.as_bytes(), reproducible)?;
        plans.push(rec);
    }
    clock.check("planning")?;

    let mut bench = Vec::new();
    if cfg.benchmark.enabled {
        bench = run_benchmark(cfg, &instance, &mut plans, &mut timings, &mut out, &exec, &clock)?;
    }

    let trajectories: Vec<_> = plans
        .iter()
        .map(|p| Ok((p.method.clone(), capacity_trajectory(&instance, &p.plan)?)))
        .collect::<Result<_>>()?;
    let mut tcsv = String::from("method,period,technology,mw\n");
    for (m, tr) in &trajectories {
        for line in trajectory_csv(tr).lines().skip(1) {
            let _ = writeln!(tcsv, "{m},{line}");
        }
    }
    out.write("reports/trajectory.csv", tcsv.as_bytes(), plans_reproducible)?;

    timings.insert("total".into(), clock.start.elapsed().as_secs_f64());
    out.manifest.timings = timings.clone();
    let mut summary = RunSummary {
        output_dir: cfg.output_dir.clone(),
        samples: cfg.samples,
        validation_mape,
        plans,
        bench,
        timings,
        manifest: None,
    };
    out.write("reports/summary.json", io::to_json("summary", &summary)?.as_bytes(), false)?;
    summary.manifest = Some(out.finish()?);
    Ok(summary)
}

fn run_benchmark(
    cfg: &RunConfig,
    instance: &PlanningInstance,
    plans: &mut Vec<PlanRecord>,
    timings: &mut BTreeMap<String, f64>,
    out: &mut ArtifactWriter,
    exec: &Executor,
    clock: &Clock,
) -> Result<Vec<BenchRow>> {
    let b = &cfg.benchmark;
    let solver = SimplexSolver::default();
    let mut method_time: BTreeMap<String, f64> = BTreeMap::new();
    let data_time = timings.get("sampling").unwrap_or(&0.0) + timings.get("labeling").unwrap_or(&0.0);
    for p in plans.iter() {
        let train = if p.method == "a-linear" { "training_linear" } else { "training_mlp" };
        let t = data_time + timings.get(train).unwrap_or(&0.0) + timings.get(&format!("solve_{}", p.method)).unwrap_or(&0.0);
        method_time.insert(p.method.clone(), t);
    }

    let mut reference_method = None;
    if b.ef_scenarios > 0 {
        let name = format!("ef({})", b.ef_scenarios);
        let sol: BaselineSolution = timed(timings, &name, || {
            let set = ScenarioSet::generate(instance, b.ef_scenarios, b.horizon, Namespace::Baseline, cfg.seeds.baseline, exec)?;
            extensive_form(instance, &set, &solver)
        })?;
        method_time.insert(name.clone(), timings[&name]);
        let rec = PlanRecord { method: name.clone(), plan: sol.plan.clone(), objective: sol.objective, surrogate: None };
        out.write(&format!("plans/{name}.json"), io::to_json("plan", &rec)?.as_bytes(), true)?;
        plans.push(rec);
        reference_method = Some(name);
        clock.check("extensive form")?;
    }
    if b.ph_scenarios > 0 {
        let name = format!("ph({})", b.ph_scenarios);
        let sol: PhSolution = timed(timings, &name, || {
            let set = ScenarioSet::generate(instance, b.ph_scenarios, b.horizon, Namespace::Baseline, cfg.seeds.baseline, exec)?;
            progressive_hedging(instance, &set, &b.ph, &solver, exec)
        })?;
        method_time.insert(name.clone(), timings[&name]);
        out.write(&format!("reports/{name}_residuals.json"), io::to_json("residuals", &sol.residuals)?.as_bytes(), true)?;
        let rec = PlanRecord { method: name.clone(), plan: sol.plan.clone(), objective: sol.objective, surrogate: None };
        out.write(&format!("plans/{name}.json"), io::to_json("plan", &rec)?.as_bytes(), true)?;
        plans.push(rec);
        clock.check("progressive hedging")?;
    }

    let reports = timed(timings, "validation", || {
        let set = ScenarioSet::generate(instance, b.validation_scenarios, b.horizon, Namespace::Validation, cfg.seeds.validation, exec)?;
        let mut reports: Vec<ValidationReport> = plans
            .iter()
            .map(|p| ValidationReport::build(&p.method, instance, &p.plan, &set, None, &solver, exec))
            .collect::<Result<_>>()?;
        if let Some(r) = &reference_method {
            let reference = reports.iter().find(|v| &v.plan_id == r).map(|v| v.mean_cost);
            for v in &mut reports {
                v.reference_cost = reference;
                v.gap_percent = reference.map(|r| crate::evaluate::optimality_gap(v.mean_cost, r)).transpose()?;
            }
        }
        Ok(reports)
    })?;
    out.write("reports/validation.json", io::to_json("validation", &reports)?.as_bytes(), false)?;

    let rows: Vec<BenchRow> = reports
        .iter()
        .map(|v| BenchRow {
            method: v.plan_id.clone(),
            cost: v.mean_cost,
            gap_percent: v.gap_percent,
            cv_percent: v.cv_percent,
            time_s: method_time.get(&v.plan_id).copied().unwrap_or(0.0),
        })
        .collect();
    out.write("reports/bench.md", bench_table(&rows, b.validation_scenarios, b.horizon).as_bytes(), false)?;
    out.write("reports/bench.csv", bench_csv(&rows).as_bytes(), false)?;
    clock.check("validation")?;
    Ok(rows)
}

/// Method comparison as a text table: method, gap, CV and time columns.
pub fn bench_table(rows: &[BenchRow], scenarios: usize, horizon: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Out-of-sample scores on {scenarios} validation scenarios per period ({horizon} h each).");
    let _ = writeln!(s);
    let _ = writeln!(s, "| Method | Cost | Gap (%) | CV (%) | Time (s) |");
    let _ = writeln!(s, "|---|---:|---:|---:|---:|");
    for r in rows {
        let gap = r.gap_percent.map_or("-".to_string(), |g| format!("{g:.2}"));
        let _ = writeln!(s, "| {} | {:.6e} | {} | {:.2} | {:.1} |", r.method, r.cost, gap, r.cv_percent, r.time_s);
    }
    s
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("method,cost,gap_percent,cv_percent,time_s\n");
    for r in rows {
        let gap = r.gap_percent.map_or(String::new(), |g| g.to_string());
        let _ = writeln!(s, "{},{},{},{},{}", r.method, r.cost, gap, r.cv_percent, r.time_s);
    }
    s
}

/// Checks `dir` against its manifest and returns the mismatching paths.
pub fn verify_run(dir: &Path) -> Result<Vec<String>> {
    Ok(Manifest::load(dir)?.verify(dir))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCell {
    /// `None` for the adaptive method.
    pub scenarios: Option<usize>,
    pub horizon: Option<usize>,
    pub label: f64,
    /// `|label - reference| / reference`.
    pub relative_error: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub sample_id: u64,
    pub plan: InvestmentPlan,
    pub reference: (usize, usize),
    pub grid: Vec<LabelCell>,
    pub adaptive: LabelCell,
    pub adaptive_periods: Vec<PeriodRecord>,
}

impl CompareReport {
    /// `scenarios,horizon,label,relative_error,wall_time_s`; the adaptive row
    /// has `adaptive` in both grid columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenarios,horizon,label,relative_error,wall_time_s\n");
        for c in self.grid.iter().chain(std::iter::once(&self.adaptive)) {
            let f = |v: Option<usize>| v.map_or("adaptive".to_string(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{},{}", f(c.scenarios), f(c.horizon), c.label, c.relative_error, c.wall_time_s);
        }
        s
    }
}

/// Labels one plan on a grid of fixed `(S, H)` settings and adaptively, and
/// scores everything against the largest grid cell.
pub fn compare_adaptive_fixed(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    sample_id: u64,
    scenarios: &[usize],
    horizons: &[usize],
    label: &LabelConfig,
    exec: &Executor,
) -> Result<CompareReport> {
    let (Some(&s_max), Some(&h_max)) = (scenarios.iter().max(), horizons.iter().max()) else {
        return Err(Error::InvalidConfig("comparison grid must not be empty".into()));
    };
    let solver = SimplexSolver::default();
    let mut grid = Vec::new();
    for &s in scenarios {
        for &h in horizons {
            let l = fixed_label(instance, plan, sample_id, s, h, &solver, exec)?;
            grid.push(LabelCell { scenarios: Some(s), horizon: Some(h), label: l.label, relative_error: 0.0, wall_time_s: l.wall_time_s });
        }
    }
    let reference = grid
        .iter()
        .find(|c| c.scenarios == Some(s_max) && c.horizon == Some(h_max))
        .map(|c| c.label)
        .expect("grid contains its largest cell");
    for c in &mut grid {
        c.relative_error = (c.label - reference).abs() / reference;
    }
    let a = adaptive_label(instance, plan, sample_id, label, &solver, exec)?;
    Ok(CompareReport {
        sample_id,
        plan: plan.clone(),
        reference: (s_max, h_max),
        grid,
        adaptive: LabelCell {
            scenarios: None,
            horizon: None,
            label: a.label,
            relative_error: (a.label - reference).abs() / reference,
            wall_time_s: a.wall_time_s,
        },
        adaptive_periods: a.periods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("samples = 20\n").unwrap().samples, 20);
        assert!(RunConfig::from_toml("samples = 2\n").is_err());
        assert!(RunConfig::from_toml("time_budget_s = 0.0\n").is_err());
        assert!(RunConfig::from_toml("instance = \"/no/such/file.toml\"\n").is_err());
        assert!(RunConfig::from_toml("nonsense = [").is_err());
        assert_eq!(cfg.benchmark.horizon, 18);
    }

    #[test]
    fn bench_table_layout() {
        let rows = vec![
            BenchRow { method: "ef(5)".into(), cost: 1e9, gap_percent: Some(0.0), cv_percent: 3.0, time_s: 2.0 },
            BenchRow { method: "a-mlp".into(), cost: 1.01e9, gap_percent: Some(1.0), cv_percent: 3.1, time_s: 9.0 },
        ];
        let t = bench_table(&rows, 10, 18);
        assert!(t.contains("| Method | Cost | Gap (%) | CV (%) | Time (s) |"));
        assert!(t.contains("| a-mlp | 1.010000e9 | 1.00 | 3.10 | 9.0 |"));
        assert_eq!(bench_csv(&rows).lines().count(), 3);
    }
}
