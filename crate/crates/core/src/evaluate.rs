//! Out-of-sample scoring of plans, optimality gaps and capacity trajectories.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{scenario_costs, ScenarioSet};
use crate::error::{Error, Result};
use crate::model::{InvestmentPlan, PlanningInstance, Technology};
use crate::optimize::LpSolver;
use crate::parallel::Executor;
use crate::scenarios::Namespace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfSample {
    pub investment_cost: f64,
    /// `c^T x + sum_t w_t Q_t` for each validation draw.
    pub totals: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over mean, in percent.
    pub cv_percent: f64,
}

/// Scores `plan` on every draw of `set`. Draw `n` uses scenario `n` of every
/// period.
pub fn score_plan(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    set: &ScenarioSet,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<OutOfSample> {
    plan.check_feasible(instance.polytope())?;
    let n = set.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("out-of-sample scoring needs at least 2 scenarios, got {n}")));
    }
    let inv = instance.investment_cost(plan)?;
    let costs = scenario_costs(instance, plan, set, solver, exec)?;
    let totals: Vec<f64> = (0..n).map(|s| inv + costs.iter().map(|p| p[s]).sum::<f64>()).collect();
    let mean = totals.iter().sum::<f64>() / n as f64;
    let var = totals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let cv_percent = if mean == 0.0 { 0.0 } else { 100.0 * var.sqrt() / mean.abs() };
    Ok(OutOfSample { investment_cost: inv, totals, mean, cv_percent })
}

/// Scores `plan` on `n` fresh draws from the validation namespace.
pub fn out_of_sample(
    instance: &PlanningInstance,
    plan: &InvestmentPlan,
    n: usize,
    seed: u64,
    horizon: usize,
    solver: &dyn LpSolver,
    exec: &Executor,
) -> Result<OutOfSample> {
    let set = ScenarioSet::generate(instance, n, horizon, Namespace::Validation, seed, exec)?;
    score_plan(instance, plan, &set, solver, exec)
}

/// `(candidate - reference) / reference * 100`.
pub fn optimality_gap(candidate: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::InvalidConfig(format!("reference cost must be positive, got {reference}")));
    }
    Ok((candidate - reference) / reference * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub year: i32,
    pub technology: Technology,
    pub mw: f64,
}

/// Installed capacity per technology and period, preexisting included.
pub fn capacity_trajectory(instance: &PlanningInstance, plan: &InvestmentPlan) -> Result<Vec<TrajectoryPoint>> {
    let mut out = Vec::new();
    for (t, &year) in instance.periods().iter().enumerate() {
        let v = instance.cumulative_capacity_at(plan, t)?;
        for tech in Technology::ALL {
            let mw = instance
                .candidates()
                .iter()
                .zip(&v)
                .filter(|(c, _)| c.kind.technology() == tech)
                .map(|(_, cap)| cap)
                .sum();
            out.push(TrajectoryPoint { year, technology: tech, mw });
        }
    }
    Ok(out)
}

pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut s = String::from("period,technology,mw\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.year, p.technology.name(), p.mw);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub plan_id: String,
    pub scenarios: usize,
    pub horizon: usize,
    pub mean_cost: f64,
    pub cv_percent: f64,
    pub investment_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_percent: Option<f64>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub wall_time_s: f64,
}

impl ValidationReport {
    /// Scores `plan` on `set` and, when given, reports the gap to `reference`.
    pub fn build(
        plan_id: &str,
        instance: &PlanningInstance,
        plan: &InvestmentPlan,
        set: &ScenarioSet,
        reference: Option<f64>,
        solver: &dyn LpSolver,
        exec: &Executor,
    ) -> Result<Self> {
        let start = Instant::now();
        let oos = score_plan(instance, plan, set, solver, exec)?;
        let gap_percent = reference.map(|r| optimality_gap(oos.mean, r)).transpose()?;
        Ok(ValidationReport {
            plan_id: plan_id.to_string(),
            scenarios: set.len(),
            horizon: set.horizon,
            mean_cost: oos.mean,
            cv_percent: oos.cv_percent,
            investment_cost: oos.investment_cost,
            reference_cost: reference,
            gap_percent,
            trajectory: capacity_trajectory(instance, plan)?,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::toy_spec;
    use crate::model::{default_instance, CandidateKind, CandidateSpec, NodeSpec};
    use crate::optimize::SimplexSolver;
    use crate::scenarios::{Scenario, StreamKey};

    fn flat_set(demands: &[f64]) -> ScenarioSet {
        let sc = demands
            .iter()
            .enumerate()
            .map(|(s, &d)| {
                let mut sc = Scenario::flat(vec![d], vec![1.0], 1);
                sc.key = StreamKey::new(Namespace::Validation, 0, 0, s + 1);
                sc
            })
            .collect();
        ScenarioSet { scenarios: vec![sc], horizon: 1, namespace: Namespace::Validation, set_id: 0 }
    }

    #[test]
    fn hand_toy_mean() {
        // 6 MW of thermal at 20/MWh, shed at 1000/MWh: demands 4, 6, 9 cost
        // 80, 120 and 120 + 3000 per hour.
        let inst = PlanningInstance::new(toy_spec(vec![2020], 1)).unwrap();
        let plan = InvestmentPlan::new(vec![6.0]);
        let w = inst.operational_weight(0, 1);
        let set = flat_set(&[4.0, 6.0, 9.0]);
        let o = score_plan(&inst, &plan, &set, &SimplexSolver::default(), &Executor::sequential()).unwrap();
        let expected = 6.0 + w * (80.0 + 120.0 + 3120.0) / 3.0;
        assert!((o.mean - expected).abs() < 1e-9 * expected);
        let same = score_plan(&inst, &plan, &flat_set(&[5.0, 5.0]), &SimplexSolver::default(), &Executor::sequential())
            .unwrap();
        assert_eq!(same.cv_percent, 0.0);
        assert!(score_plan(&inst, &plan, &flat_set(&[5.0]), &SimplexSolver::default(), &Executor::sequential()).is_err());
    }

    #[test]
    fn decomposes_into_investment_plus_average_q() {
        let inst = default_instance();
        let ex = Executor::sequential();
        let solver = SimplexSolver::default();
        let plan = crate::sampling::sample_plans(1, inst.polytope(), 8, Default::default(), &ex).unwrap().plans.remove(0);
        let set = ScenarioSet::generate(&inst, 3, 6, Namespace::Validation, 2, &ex).unwrap();
        let o = score_plan(&inst, &plan, &set, &solver, &ex).unwrap();
        let mut avg = 0.0;
        for t in 0..inst.num_periods() {
            let caps = inst.cumulative_capacity_at(&plan, t).unwrap();
            for sc in &set.scenarios[t] {
                avg += inst.operational_weight(t, 6) * crate::model::evaluate_q(&inst, &caps, sc, &solver).unwrap() / 3.0;
            }
        }
        let expected = inst.investment_cost(&plan).unwrap() + avg;
        assert!((o.mean - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn gap_arithmetic() {
        assert_eq!(optimality_gap(7.0, 7.0).unwrap(), 0.0);
        assert!((optimality_gap(105.0, 100.0).unwrap() - 5.0).abs() < 1e-12);
        assert!(optimality_gap(1.0, 0.0).is_err());
        let (a, b) = (123.4, 98.7);
        let lhs = optimality_gap(a, b).unwrap();
        let rhs = -optimality_gap(b, a).unwrap() * a / b;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn trajectories() {
        let inst = default_instance();
        let zero = InvestmentPlan::zeros(inst.num_vars());
        let tr = capacity_trajectory(&inst, &zero).unwrap();
        let thermal_2020: f64 = inst
            .candidates()
            .iter()
            .filter(|c| c.kind.technology() == Technology::Thermal)
            .map(|c| c.preexisting[0])
            .sum();
        assert_eq!(tr[0].technology, Technology::Thermal);
        assert_eq!(tr[0].mw, thermal_2020);

        // Lifetime 1: a build counts in its own period and the next one.
        let mut spec = toy_spec(vec![1, 2, 3, 4], 1);
        spec.nodes.push(NodeSpec { id: "m".into(), demand: vec![1.0; 4] });
        spec.candidates.push(CandidateSpec {
            id: "line".into(),
            inv_cost: vec![1.0; 4],
            lifetime: 10,
            preexisting: vec![0.0; 4],
            max_build: vec![100.0; 4],
            kind: CandidateKind::Line { from: "n".into(), to: "m".into(), capacity_factor: 1.0 },
        });
        let inst = PlanningInstance::new(spec).unwrap();
        let plan = InvestmentPlan::new(vec![10.0, 0.0, 5.0, 0.0, 10.0, 0.0, 0.0, 0.0]);
        let tr = capacity_trajectory(&inst, &plan).unwrap();
        let thermal: Vec<f64> = tr.iter().filter(|p| p.technology == Technology::Thermal).map(|p| p.mw).collect();
        assert_eq!(thermal, vec![10.0, 10.0, 5.0, 5.0]);
        let lines: Vec<f64> = tr.iter().filter(|p| p.technology == Technology::Transmission).map(|p| p.mw).collect();
        assert_eq!(lines, vec![10.0; 4]);
        let csv = trajectory_csv(&tr);
        assert!(csv.starts_with("period,technology,mw\n"));
    }
}
