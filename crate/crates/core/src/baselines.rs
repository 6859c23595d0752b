//! Reference solvers: the extensive form over a common scenario set and
//! progressive hedging.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{add_operations, capacity_exprs, evaluate_q, InvestmentPlan, PlanningInstance};
use crate::optimize::{LinearProgram, LpSolver, Sense, SolveStatus};
use crate::parallel::Executor;
use crate::scenarios::{self, Namespace, Scenario, StreamKey};

/// `S` equally likely scenarios per period at a common horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    /// `[period][scenario]`
    pub scenarios: Vec<Vec<Scenario>>,
    pub horizon: usize,
    pub namespace: Namespace,
    pub set_id: u64,
}

impl ScenarioSet {
    /// Scenario `s` of period `t` uses stream key `(namespace, set_id, t, s + 1)`.
    pub fn generate(
        instance: &PlanningInstance,
        count: usize,
        horizon: usize,
        namespace: Namespace,
        set_id: u64,
        exec: &Executor,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidConfig("scenario set must not be empty".into()));
        }
        let gen = instance.generator_params();
        let t_count = instance.num_periods();
        let flat = exec.try_map(t_count * count, |k| {
            let (t, s) = (k / count, k % count);
            scenarios::sample(gen, StreamKey::new(namespace, set_id, t, s + 1), horizon)
        })?;
        let mut it = flat.into_iter();
        let scenarios = (0..t_count).map(|_| it.by_ref().take(count).collect()).collect();
        Ok(ScenarioSet { scenarios, horizon, namespace, set_id })
    }

    pub fn len(&self) -> usize {
        self.scenarios.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The first `count` scenarios of every period.
    pub fn truncated(&self, count: usize) -> Self {
        ScenarioSet {
            scenarios: self.scenarios.iter().map(|v| v[..count.min(v.len())].to_vec()).collect(),
            ..self.clone()
        }
    }
}

/// Weighted production cost of `plan` on every scenario, `[period][scenario]`.
pub fn scenario_costs(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    set: &ScenarioSet,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<Vec<Vec<f64>>> {
    let s = set.len();
    let caps = (0..instance.num_periods())
        .map(|t| instance.cumulative_capacity_at(plan, t))
        .collect::<Result<Vec<_>>>()?;
    let flat = exec.try_map(instance.num_periods() * s, |k| {
        let (t, i) = (k / s, k % s);
        let sc = &set.scenarios[t][i];
        let q = evaluate_q(instance, &caps[t], sc, solver)
            .map_err(|e| Error::Label(format!("period {t}, scenario {}: {e}", i + 1)))?;
        Ok::<f64, Error>(instance.operational_weight(t, sc.horizon) * q)
    })?;
    Ok(flat.chunks(s).map(<[f64]>::to_vec).collect())
}

/// `c^T x + sum_t (1/S) sum_s w_t Q_t(x, scenario)`.
pub fn saa_cost(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    set: &ScenarioSet,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<f64> {
    let costs = scenario_costs(instance, plan, set, solver, exec)?;
    let s = set.len() as f64;
    Ok(instance.investment_cost(plan)? + costs.iter().map(|p| p.iter().sum::<f64>() / s).sum::<f64>())
}

/// Plan variables, investment costs and first-stage rows.
fn first_stage_lp(instance: &PlanningInstance) -> LinearProgram {
    let p = instance.polytope();
    let c = instance.investment_costs();
    let mut lp = LinearProgram::new();
    for j in 0..p.num_vars() {
        lp.add_var(c[j], p.lower[j], p.upper[j]);
    }
    for (row, &b) in p.a.iter().zip(&p.b) {
        lp.add_row(row.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, &a)| (j, a)).collect(), Sense::Le, b);
    }
    lp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSolution {
    pub plan: InvestmentPlan,
    pub objective: f64,
    pub scenarios: usize,
    pub horizon: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
}

fn plan_from(instance: &PlanningInstance, x: &[f64]) -> Result<InvestmentPlan> {
    let p = instance.polytope();
    let plan = InvestmentPlan::new((0..p.num_vars()).map(|j| x[j].clamp(p.lower[j], p.upper[j])).collect());
    plan.check_feasible(p)?;
    Ok(plan)
}

/// Builds the extensive form: one LP over the plan and every scenario's
/// dispatch, each scenario weighted `1/S`.
pub fn extensive_form_lp(instance: &PlanningInstance, set: &ScenarioSet) -> Result<LinearProgram> {
    if set.is_empty() {
        return Err(Error::InvalidConfig("extensive form needs at least one scenario".into()));
    }
    let mut lp = first_stage_lp(instance);
    let s = set.len() as f64;
    for t in 0..instance.num_periods() {
        let caps = capacity_exprs(instance, t, 0);
        for sc in &set.scenarios[t] {
            add_operations(&mut lp, instance, sc, &caps, instance.operational_weight(t, sc.horizon) / s)?;
        }
    }
    Ok(lp)
}

pub fn extensive_form(instance: &PlanningInstance, set: &ScenarioSet, solver: &dyn LpSolver) -> Result<BaselineSolution> {
    let start = Instant::now();
    let lp = extensive_form_lp(instance, set)?;
    let r = solver.solve(&lp)?;
    if r.status != SolveStatus::Optimal {
        return Err(Error::NotOptimal { context: "extensive form".into(), status: r.status });
    }
    Ok(BaselineSolution {
        plan: plan_from(instance, &r.x)?,
        objective: r.objective,
        scenarios: set.len(),
        horizon: set.horizon,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhConfig {
    /// Multiplier on the cost-proportional penalty `c_i / (x_max,i + 1)`.
    pub rho_scale: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Breakpoints per side of the piecewise-linear proximal term.
    pub prox_breakpoints: usize,
    #[serde(with = "opt_secs")]
    pub subproblem_time_limit: Option<Duration>,
}

mod opt_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(Duration::from_secs_f64))
    }
}

impl Default for PhConfig {
    fn default() -> Self {
        PhConfig { rho_scale: 1.0, tolerance: 1e-3, max_iterations: 200, prox_breakpoints: 12, subproblem_time_limit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhSolution {
    pub plan: InvestmentPlan,
    /// `c^T x + SAA` of the returned plan on the PH scenario set.
    pub objective: f64,
    pub iterations: usize,
    /// Residual after each iteration, the first entry being the
    /// unpenalized solve.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// The averaged plan was outside the polytope and had to be projected.
    pub projected: bool,
    pub rho: Vec<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|a| a * a).sum::<f64>().sqrt()
}

/// Non-anticipativity residual `max_s ||x_s - x̄|| / max(1, ||x̄||)`.
pub fn ph_residual(xs: &[Vec<f64>], xbar: &[f64]) -> f64 {
    let scale = norm(xbar.iter().copied()).max(1.0);
    xs.iter().map(|x| norm(x.iter().zip(xbar).map(|(a, b)| a - b))).fold(0.0, f64::max) / scale
}

/// Adds `d_j >= (rho_j / 2)(x_j - xbar_j)^2` as tangent cuts at
/// `u = 0, ±range 2^-m` and returns the objective index range of `d`.
fn add_proximal(lp: &mut LinearProgram, n: usize, xbar: &[f64], rho: &[f64], range: &[f64], breakpoints: usize) {
    for j in 0..n {
        if rho[j] == 0.0 {
            continue;
        }
        let d = lp.add_var(1.0, 0.0, f64::INFINITY);
        for m in 1..=breakpoints {
            let u = range[j] * 0.5f64.powi(m as i32 - 1);
            for uk in [u, -u] {
                // d >= rho uk (x - xbar) - rho uk^2 / 2
                lp.add_row(vec![(d, 1.0), (j, -rho[j] * uk)], Sense::Ge, -rho[j] * uk * xbar[j] - 0.5 * rho[j] * uk * uk);
            }
        }
    }
}

/// Progressive hedging over the scenarios of `set`: scenario `s` takes the
/// `s`-th scenario of every period.
pub fn progressive_hedging(
    instance: &PlanningInstance,
    set: &ScenarioSet,
    cfg: &PhConfig,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<PhSolution> {
    if set.is_empty() {
        return Err(Error::InvalidConfig("progressive hedging needs at least one scenario".into()));
    }
    if !(cfg.tolerance > 0.0) || !(cfg.rho_scale > 0.0) {
        return Err(Error::InvalidConfig("PH tolerance and rho_scale must be positive".into()));
    }
    let start = Instant::now();
    let n = instance.num_vars();
    let s_count = set.len();
    let p = instance.polytope();
    let c = instance.investment_costs();
    let rho: Vec<f64> = (0..n).map(|j| cfg.rho_scale * c[j] / (p.upper[j] + 1.0)).collect();
    let range: Vec<f64> = (0..n).map(|j| (p.upper[j] - p.lower[j]).max(1e-9)).collect();

    let base: Vec<LinearProgram> = (0..s_count)
        .map(|s| {
            let mut lp = first_stage_lp(instance);
            for t in 0..instance.num_periods() {
                let sc = &set.scenarios[t][s];
                add_operations(&mut lp, instance, sc, &capacity_exprs(instance, t, 0), instance.operational_weight(t, sc.horizon))?;
            }
            Ok(lp)
        })
        .collect::<Result<_>>()?;

    let solve = |lp: &LinearProgram, s: usize| -> Result<Vec<f64>> {
        let r = solver.solve_with_limit(lp, cfg.subproblem_time_limit)?;
        if !r.has_point() {
            return Err(Error::NotOptimal { context: format!("PH subproblem {}", s + 1), status: r.status });
        }
        Ok(r.x[..n].to_vec())
    };
    let mut xs = exec.try_map(s_count, |s| solve(&base[s], s))?;
    let average = |xs: &[Vec<f64>]| -> Vec<f64> {
        (0..n).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / s_count as f64).collect()
    };
    let mut xbar = average(&xs);
    let mut w: Vec<Vec<f64>> = xs.iter().map(|x| (0..n).map(|j| rho[j] * (x[j] - xbar[j])).collect()).collect();
    let mut residuals = vec![ph_residual(&xs, &xbar)];
    let mut iterations = 1;
    while residuals.last().copied().unwrap_or(0.0) >= cfg.tolerance && iterations < cfg.max_iterations {
        xs = exec.try_map(s_count, |s| {
            let mut lp = base[s].clone();
            for j in 0..n {
                lp.objective[j] += w[s][j];
            }
            add_proximal(&mut lp, n, &xbar, &rho, &range, cfg.prox_breakpoints);
            solve(&lp, s)
        })?;
        xbar = average(&xs);
        for (ws, x) in w.iter_mut().zip(&xs) {
            for j in 0..n {
                ws[j] += rho[j] * (x[j] - xbar[j]);
            }
        }
        residuals.push(ph_residual(&xs, &xbar));
        iterations += 1;
    }
    let converged = residuals.last().copied().unwrap_or(0.0) < cfg.tolerance;

    let clamped: Vec<f64> = (0..n).map(|j| xbar[j].clamp(p.lower[j], p.upper[j])).collect();
    let projected = clamped != xbar || !p.contains(&clamped);
    let x_final = if p.contains(&clamped) { clamped } else { project(instance, &xbar, solver)? };
    let plan = InvestmentPlan::new(x_final);
    plan.check_feasible(p)?;
    let objective = saa_cost(instance, &plan, set, solver, exec)?;
    Ok(PhSolution {
        plan,
        objective,
        iterations,
        residuals,
        converged,
        projected,
        rho,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Nearest point of the first-stage polytope in the 1-norm.
fn project(instance: &PlanningInstance, target: &[f64], solver: &dyn LpSolver) -> Result<Vec<f64>> {
    let mut lp = first_stage_lp(instance);
    let n = target.len();
    lp.objective.iter_mut().for_each(|c| *c = 0.0);
    for (j, &t) in target.iter().enumerate() {
        let e = lp.add_var(1.0, 0.0, f64::INFINITY);
        lp.add_row(vec![(e, 1.0), (j, -1.0)], Sense::Ge, -t);
        lp.add_row(vec![(e, 1.0), (j, 1.0)], Sense::Ge, t);
    }
    let r = solver.solve(&lp)?;
    if !r.has_point() {
        return Err(Error::NotOptimal { context: "PH projection".into(), status: r.status });
    }
    Ok(r.x[..n].to_vec())
}
