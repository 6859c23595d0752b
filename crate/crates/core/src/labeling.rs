//! Adaptive labeling: picks the operational horizon and scenario count per
//! period and returns the sample-average estimate of expected production
//! cost of a plan.
//!
//! Step 1 lengthens the horizon until the coefficient of variation of the
//! per-scenario costs drops below `cv_tol`. Step 2 then checks the relative
//! half-width of the normal confidence interval of the mean and, if it is
//! above `ci_tol`, adds scenarios at the settled horizon until the required
//! count is reached. The label is the sum over periods of the per-period mean.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{evaluate_q, InvestmentPlan, PlanningInstance};
use crate::optimize::LpSolver;
use crate::parallel::Executor;
use crate::scenarios::{self, Namespace, StreamKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    /// Initial number of scenarios `S0`.
    pub initial_scenarios: usize,
    /// Initial horizon `H0` in hours.
    pub initial_horizon: usize,
    /// Horizon increment in hours.
    pub horizon_step: usize,
    /// Coefficient-of-variation threshold.
    pub cv_tol: f64,
    /// Relative confidence-interval half-width tolerance.
    pub ci_tol: f64,
    /// The interval has confidence `1 - alpha`.
    pub alpha: f64,
    /// Longest horizon Step 1 may reach.
    pub max_horizon: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            initial_scenarios: 5,
            initial_horizon: 6,
            horizon_step: 6,
            cv_tol: 0.05,
            ci_tol: 0.1,
            alpha: 0.05,
            max_horizon: 168,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("label config: {m}")));
        if self.initial_scenarios < 2 {
            return bad("initial_scenarios must be at least 2");
        }
        if self.initial_horizon < 1 || self.horizon_step < 1 {
            return bad("initial_horizon and horizon_step must be at least 1");
        }
        if self.max_horizon < self.initial_horizon {
            return bad("max_horizon must be at least initial_horizon");
        }
        for (name, v) in [("cv_tol", self.cv_tol), ("ci_tol", self.ci_tol), ("alpha", self.alpha)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(&format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        Ok(())
    }

    /// Upper bound on Step-1 passes.
    pub fn max_step1_iterations(&self) -> usize {
        (self.max_horizon - self.initial_horizon).div_ceil(self.horizon_step) + 1
    }
}

/// Double-double number `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Dd { hi, lo }
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        Dd::renorm(s, e + self.lo + o.lo)
    }

    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        Dd::renorm(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    fn div_f64(self, d: f64) -> Dd {
        let q1 = self.hi / d;
        let (p, e) = two_prod(q1, d);
        let r = Dd::renorm(self.hi - p, self.lo - e);
        let q2 = (r.hi + r.lo) / d;
        Dd::renorm(q1, q2)
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Streaming `(Sum, SumSq)` kept in double-double precision.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    sum: Dd,
    sum_sq: Dd,
    count: usize,
}

impl Moments {
    pub fn new() -> Self {
        Moments::default()
    }

    pub fn from_costs(costs: &[f64]) -> Self {
        let mut m = Moments::new();
        for &q in costs {
            m.push(q);
        }
        m
    }

    pub fn push(&mut self, q: f64) {
        let (p, e) = two_prod(q, q);
        self.sum = self.sum.add(Dd::from(q));
        self.sum_sq = self.sum_sq.add(Dd { hi: p, lo: e });
        self.count += 1;
    }

    /// `Sum* = Sum + Sum'`, `SumSq* = SumSq + SumSq'`.
    pub fn merge(&mut self, other: &Moments) {
        self.sum = self.sum.add(other.sum);
        self.sum_sq = self.sum_sq.add(other.sum_sq);
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> f64 {
        self.sum.value()
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq.value()
    }

    pub fn mean(&self) -> f64 {
        self.sum.div_f64(self.count as f64).value()
    }

    /// `(SumSq - Sum^2 / S) / (S - 1)`, clamped at zero.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let s = self.count as f64;
        let centered = self.sum_sq.add(self.sum.mul(self.sum).div_f64(s).neg());
        (centered.value() / (s - 1.0)).max(0.0)
    }
}

/// Coefficient of variation `sqrt(s^2) / q̄` from plain sums.
pub fn cv(sum: f64, sum_sq: f64, s: usize) -> Result<f64> {
    if s < 2 {
        return Err(Error::Label(format!("coefficient of variation needs at least 2 scenarios, got {s}")));
    }
    let mean = sum / s as f64;
    if !(mean > 0.0) {
        return Err(Error::Label(format!("mean cost {mean} is not positive")));
    }
    let var = ((sum_sq - sum * sum / s as f64) / (s as f64 - 1.0)).max(0.0);
    Ok(var.sqrt() / mean)
}

/// Two-sided standard normal quantile `z_{1 - alpha/2}`.
pub fn z_value(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Relative half-width `z sqrt(s^2) / (q̄ sqrt(S))`.
pub fn half_width(mean: f64, variance: f64, alpha: f64, s: usize) -> f64 {
    z_value(alpha) * variance.sqrt() / (mean * (s as f64).sqrt())
}

/// `max(ceil((z / ci_tol)^2 s^2 / q̄^2), S)`.
pub fn required_scenarios(mean: f64, variance: f64, ci_tol: f64, alpha: f64, s: usize) -> Result<usize> {
    if !(mean > 0.0) {
        return Err(Error::Label(format!("mean cost {mean} is not positive")));
    }
    let z = z_value(alpha);
    let need = ((z / ci_tol).powi(2) * variance / (mean * mean)).ceil();
    if !need.is_finite() {
        return Err(Error::Label(format!("required scenario count is not finite ({need})")));
    }
    Ok((need as usize).max(s))
}

/// Per-scenario weighted production costs of period `t` for scenarios
/// `first..=last` at `horizon`, in scenario order.
#[allow(clippy::too_many_arguments)]
pub fn scenario_costs(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    sample_id: u64,
    t: usize,
    first: usize,
    last: usize,
    horizon: usize,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<Vec<f64>> {
    if first > last || horizon == 0 {
        return Err(Error::Label(format!("bad estimator range {first}..={last} at horizon {horizon}")));
    }
    let v = instance.cumulative_capacity_at(plan, t)?;
    let weight = instance.operational_weight(t, horizon);
    let gen = instance.generator_params();
    exec.try_map(last - first + 1, |k| {
        let key = StreamKey::new(Namespace::Training, sample_id, t, first + k);
        let scenario = scenarios::sample(gen, key, horizon)?;
        let q = evaluate_q(instance, &v, &scenario, solver).map_err(|e| {
            Error::Label(format!("sample {sample_id}, period {t}, scenario {}, horizon {horizon}: {e}", first + k))
        })?;
        Ok(weight * q)
    })
}

/// `(Sum, SumSq)` over scenarios `first..=last`.
#[allow(clippy::too_many_arguments)]
pub fn estimator(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    sample_id: u64,
    t: usize,
    first: usize,
    last: usize,
    horizon: usize,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<Moments> {
    let costs = scenario_costs(instance, plan, sample_id, t, first, last, horizon, solver, exec)?;
    Ok(Moments::from_costs(&costs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub year: i32,
    /// Final scenario count.
    pub scenarios: usize,
    /// Horizon that produced the accepted statistics.
    pub horizon: usize,
    /// Value of the horizon counter after Step 1, including the increment
    /// made on the exit pass.
    pub horizon_counter: usize,
    pub step1_iterations: usize,
    pub mean: f64,
    pub variance: f64,
    /// CV at the end of Step 1.
    pub cv: f64,
    /// Relative CI half-width at the end of Step 1.
    pub half_width: f64,
    pub step2: bool,
    /// Step 1 stopped at `max_horizon` without meeting `cv_tol`.
    pub capped: bool,
    pub wall_time_s: f64,
    /// Weighted cost of every scenario used for the final statistics.
    #[serde(skip)]
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: u64,
    pub plan: InvestmentPlan,
    /// Sum over periods of the per-period mean cost.
    pub label: f64,
    pub periods: Vec<PeriodRecord>,
    pub wall_time_s: f64,
}

fn checked_stats(m: &Moments, what: &str) -> Result<(f64, f64)> {
    let (mean, var) = (m.mean(), m.variance());
    if !mean.is_finite() || !var.is_finite() {
        return Err(Error::Label(format!("{what}: non-finite statistics (mean {mean}, variance {var})")));
    }
    if mean <= 0.0 {
        return Err(Error::Label(format!("{what}: mean cost {mean} is not positive")));
    }
    Ok((mean, var))
}

fn label_period(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    sample_id: u64,
    t: usize,
    cfg: &LabelConfig,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<PeriodRecord> {
    let start = Instant::now();
    let what = format!("sample {sample_id}, period {}", instance.periods()[t]);
    let mut s = cfg.initial_scenarios;
    let mut horizon = cfg.initial_horizon;
    let mut iterations = 0;
    let (mut costs, used, capped, mean, var, delta) = loop {
        let costs = scenario_costs(instance, plan, sample_id, t, 1, s, horizon, solver, exec)?;
        let (mean, var) = checked_stats(&Moments::from_costs(&costs), &what)?;
        let delta = var.sqrt() / mean;
        iterations += 1;
        let used = horizon;
        horizon += cfg.horizon_step;
        if delta <= cfg.cv_tol {
            break (costs, used, false, mean, var, delta);
        }
        if used >= cfg.max_horizon {
            break (costs, used, true, mean, var, delta);
        }
        horizon = horizon.min(cfg.max_horizon);
    };
    let counter = if capped { used } else { used + cfg.horizon_step };
    let r = half_width(mean, var, cfg.alpha, s);
    let mut step2 = false;
    let mut moments = Moments::from_costs(&costs);
    if r > cfg.ci_tol {
        step2 = true;
        let s_hat = required_scenarios(mean, var, cfg.ci_tol, cfg.alpha, s)?;
        if s_hat > s {
            let extra = scenario_costs(instance, plan, sample_id, t, s + 1, s_hat, used, solver, exec)?;
            moments.merge(&Moments::from_costs(&extra));
            costs.extend(extra);
            s = s_hat;
        }
    }
    let (mean_final, var_final) = checked_stats(&moments, &what)?;
    Ok(PeriodRecord {
        year: instance.periods()[t],
        scenarios: s,
        horizon: used,
        horizon_counter: counter,
        step1_iterations: iterations,
        mean: mean_final,
        variance: var_final,
        cv: delta,
        half_width: r,
        step2,
        capped,
        wall_time_s: start.elapsed().as_secs_f64(),
        costs,
    })
}

/// Labels one plan. Periods are processed independently; the result does not
/// depend on the executor.
pub fn adaptive_label(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    sample_id: u64,
    cfg: &LabelConfig,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<LabeledSample> {
    cfg.validate()?;
    let start = Instant::now();
    let periods = (0..instance.num_periods())
        .map(|t| label_period(instance, plan, sample_id, t, cfg, solver, exec))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(sample_id, plan, periods, start))
}

/// Reference label with a fixed scenario count and horizon in every period.
pub fn fixed_label(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    sample_id: u64,
    scenarios: usize,
    horizon: usize,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<LabeledSample> {
    if scenarios < 2 || horizon == 0 {
        return Err(Error::InvalidConfig(format!("fixed label needs S >= 2 and H >= 1, got S={scenarios}, H={horizon}")));
    }
    let start = Instant::now();
    let periods = (0..instance.num_periods())
        .map(|t| {
            let t0 = Instant::now();
            let what = format!("sample {sample_id}, period {}", instance.periods()[t]);
            let costs = scenario_costs(instance, plan, sample_id, t, 1, scenarios, horizon, solver, exec)?;
            let (mean, var) = checked_stats(&Moments::from_costs(&costs), &what)?;
            Ok(PeriodRecord {
                year: instance.periods()[t],
                scenarios,
                horizon,
                horizon_counter: horizon,
                step1_iterations: 0,
                mean,
                variance: var,
                cv: var.sqrt() / mean,
                half_width: 0.0,
                step2: false,
                capped: false,
                wall_time_s: t0.elapsed().as_secs_f64(),
                costs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(sample_id, plan, periods, start))
}

fn finish(sample_id: u64, plan: &InvestmentPlan, periods: Vec<PeriodRecord>, start: Instant) -> LabeledSample {
    let label = periods.iter().map(|p| p.mean).sum();
    LabeledSample { sample_id, plan: plan.clone(), label, periods, wall_time_s: start.elapsed().as_secs_f64() }
}

/// Labels every plan; plan `k` uses sample id `first_id + k`.
pub fn label_plans(
    instance: &PlanningInstance,
    plans: &[InvestmentPlan],
    first_id: u64,
    cfg: &LabelConfig,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let inner = Executor::sequential();
    exec.try_map(plans.len(), |k| adaptive_label(instance, &plans[k], first_id + k as u64, cfg, solver, &inner))
}
