//! Planning instance data model, first-stage polytope, cumulative capacity
//! accounting and the hourly production-cost LP.

mod instance;
mod operations;
mod synthetic;

pub use instance::{
    CandidateKind, CandidateSpec, FirstStagePolytope, InstanceSpec, InvestmentPlan, NodeSpec,
    PlanningInstance, RowSpec, Technology, Term, INSTANCE_FORMAT_VERSION,
};
pub use operations::{
    add_operations, build_second_stage, capacity_exprs, evaluate_q, CapacityExpr, OperationalLp,
    OperationsBlock,
};
pub use synthetic::{synthetic_instance, SyntheticConfig};

use std::path::Path;

use crate::error::{Error, Result};

/// The default synthetic instance (3 nodes, 3 periods).
pub fn default_instance() -> PlanningInstance {
    PlanningInstance::new(synthetic_instance(&SyntheticConfig::default()))
        .expect("default synthetic instance is valid")
}

pub fn instance_to_toml(spec: &InstanceSpec) -> Result<String> {
    toml::to_string(spec).map_err(|e| Error::Format { what: "instance".into(), message: e.to_string() })
}

pub fn instance_from_toml(text: &str) -> Result<PlanningInstance> {
    let spec: InstanceSpec =
        toml::from_str(text).map_err(|e| Error::Format { what: "instance".into(), message: e.to_string() })?;
    PlanningInstance::new(spec)
}

pub fn load_instance(path: &Path) -> Result<PlanningInstance> {
    instance_from_toml(&std::fs::read_to_string(path)?)
}

pub fn save_instance(spec: &InstanceSpec, path: &Path) -> Result<()> {
    std::fs::write(path, instance_to_toml(spec)?)?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::optimize::SimplexSolver;
    use crate::scenarios::{RenewableProfile, Scenario, ScenarioParams};

    /// One node, one thermal generator, optionally one storage unit.
    pub(crate) fn toy_spec(periods: Vec<i32>, lifetime: usize) -> InstanceSpec {
        let t = periods.len();
        InstanceSpec {
            format_version: INSTANCE_FORMAT_VERSION,
            name: "toy".into(),
            periods,
            discount_rate: 0.0,
            shed_penalty: 1000.0,
            nodes: vec![NodeSpec { id: "n".into(), demand: vec![5.0; t] }],
            candidates: vec![CandidateSpec {
                id: "gen".into(),
                inv_cost: vec![1.0; t],
                lifetime,
                preexisting: vec![0.0; t],
                max_build: vec![100.0; t],
                kind: CandidateKind::Thermal { node: "n".into(), marginal_cost: 20.0, ramp_rate: 1.0 },
            }],
            rows: vec![],
            scenario: ScenarioParams::default(),
        }
    }

    fn toy(periods: Vec<i32>, lifetime: usize) -> PlanningInstance {
        PlanningInstance::new(toy_spec(periods, lifetime)).unwrap()
    }

    #[test]
    fn zero_plan_gives_preexisting() {
        let inst = default_instance();
        let zero = InvestmentPlan::zeros(inst.num_vars());
        for (t, &year) in inst.periods().iter().enumerate() {
            let v = inst.cumulative_capacity(&zero, year).unwrap();
            let pre: Vec<f64> = inst.candidates().iter().map(|c| c.preexisting[t]).collect();
            assert_eq!(v, pre);
        }
    }

    #[test]
    fn long_lifetime_accumulates_everything() {
        let inst = toy(vec![1, 2, 3], 5);
        let plan = InvestmentPlan::new(vec![5.0, 3.0, 2.0]);
        assert_eq!(inst.cumulative_capacity(&plan, 1).unwrap(), vec![5.0]);
        assert_eq!(inst.cumulative_capacity(&plan, 2).unwrap(), vec![8.0]);
        assert_eq!(inst.cumulative_capacity(&plan, 3).unwrap(), vec![10.0]);
    }

    #[test]
    fn unit_lifetime_window() {
        // Window t-1..=t: in period 3 only the period-2 and period-3 builds count.
        let inst = toy(vec![1, 2, 3], 1);
        let plan = InvestmentPlan::new(vec![5.0, 3.0, 0.0]);
        assert_eq!(inst.cumulative_capacity(&plan, 3).unwrap(), vec![3.0]);
        assert_eq!(inst.cumulative_capacity(&plan, 2).unwrap(), vec![8.0]);
    }

    #[test]
    fn cumulative_capacity_errors() {
        let inst = toy(vec![1, 2], 1);
        assert!(matches!(
            inst.cumulative_capacity(&InvestmentPlan::zeros(3), 1),
            Err(Error::Dimension { expected: 2, got: 3 })
        ));
        assert!(matches!(
            inst.cumulative_capacity(&InvestmentPlan::zeros(2), 7),
            Err(Error::UnknownPeriod(7))
        ));
    }

    #[test]
    fn closed_form_single_generator_dispatch() {
        let inst = toy(vec![1], 1);
        let sc = Scenario::flat(vec![5.0], vec![1.0], 2);
        let q = evaluate_q(&inst, &[10.0], &sc, &SimplexSolver::default()).unwrap();
        assert!((q - 2.0 * 5.0 * 20.0).abs() < 1e-9, "{q}");
        let op = build_second_stage(&inst, &[10.0], &sc).unwrap();
        let r = crate::optimize::solve_lp(&op.lp).unwrap();
        for shed in op.block.shed.iter().flatten() {
            assert!(r.x[*shed].abs() < 1e-9);
        }
    }

    #[test]
    fn zero_capacity_sheds_everything() {
        let inst = default_instance();
        let sc = crate::scenarios::sample(
            inst.generator_params(),
            crate::scenarios::StreamKey::new(crate::scenarios::Namespace::Training, 0, 0, 1),
            4,
        )
        .unwrap();
        let v = vec![0.0; inst.num_candidates()];
        let q = evaluate_q(&inst, &v, &sc, &SimplexSolver::default()).unwrap();
        let expected: f64 = sc.demand.iter().flatten().sum::<f64>() * inst.shed_penalty();
        assert!((q - expected).abs() <= 1e-6 * expected);

        let mut doubled = sc.clone();
        doubled.scale_demand(2.0);
        let q2 = evaluate_q(&inst, &v, &doubled, &SimplexSolver::default()).unwrap();
        assert!((q2 - 2.0 * q).abs() <= 1e-6 * q2);
    }

    #[test]
    fn single_hour_has_no_ramp_rows() {
        let inst = toy(vec![1], 1);
        let one = build_second_stage(&inst, &[10.0], &Scenario::flat(vec![5.0], vec![1.0], 1)).unwrap();
        // balance row only
        assert_eq!(one.lp.num_rows(), 1);
        let two = build_second_stage(&inst, &[10.0], &Scenario::flat(vec![5.0], vec![1.0], 2)).unwrap();
        assert_eq!(two.lp.num_rows(), 2 + 2);
    }

    #[test]
    fn ramp_limits_bind() {
        let mut spec = toy_spec(vec![1], 1);
        spec.candidates[0].kind = CandidateKind::Thermal { node: "n".into(), marginal_cost: 20.0, ramp_rate: 0.1 };
        let inst = PlanningInstance::new(spec).unwrap();
        let mut sc = Scenario::flat(vec![0.0], vec![1.0], 2);
        sc.demand[0] = vec![0.0, 5.0];
        // Output can rise by 1 MW between the hours, the remaining 4 MW are shed.
        let q = evaluate_q(&inst, &[10.0], &sc, &SimplexSolver::default()).unwrap();
        assert!((q - (20.0 * 1.0 + 1000.0 * 4.0)).abs() < 1e-6, "{q}");
    }

    #[test]
    fn storage_shifts_cheap_energy() {
        let mut spec = toy_spec(vec![1], 1);
        spec.candidates.push(CandidateSpec {
            id: "pv".into(),
            inv_cost: vec![1.0],
            lifetime: 1,
            preexisting: vec![0.0],
            max_build: vec![10.0],
            kind: CandidateKind::Renewable {
                node: "n".into(),
                marginal_cost: 0.0,
                profile: RenewableProfile { mean_cf: 0.5, diurnal_amplitude: 0.0, peak_hour: 12.0, seasonal_amplitude: 0.0 },
            },
        });
        spec.candidates.push(CandidateSpec {
            id: "bat".into(),
            inv_cost: vec![1.0],
            lifetime: 1,
            preexisting: vec![0.0],
            max_build: vec![10.0],
            kind: CandidateKind::Storage { node: "n".into(), efficiency: 0.5, energy_ratio: 4.0 },
        });
        let inst = PlanningInstance::new(spec).unwrap();
        let mut sc = Scenario::flat(vec![5.0], vec![1.0, 1.0], 2);
        sc.demand[0] = vec![0.0, 5.0];
        sc.availability[1] = vec![1.0, 0.0];
        // Hour 0: 10 MW of free PV charges the battery (4 MW cap -> 2 MWh stored).
        // Hour 1: discharge 2 MW, thermal supplies 3 MW at 20.
        let q = evaluate_q(&inst, &[10.0, 10.0, 4.0], &sc, &SimplexSolver::default()).unwrap();
        assert!((q - 60.0).abs() < 1e-6, "{q}");
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let inst = default_instance();
        let sc = Scenario::flat(vec![0.0; 3], vec![1.0; inst.generators().len()], 6);
        let v: Vec<f64> = inst.candidates().iter().map(|c| c.preexisting[0] + 10.0).collect();
        let q = evaluate_q(&inst, &v, &sc, &SimplexSolver::default()).unwrap();
        assert!(q.abs() < 1e-9);
    }

    #[test]
    fn inconsistent_scenario_rejected() {
        let inst = default_instance();
        let sc = Scenario::flat(vec![1.0; 2], vec![1.0; inst.generators().len()], 3);
        let v = vec![0.0; inst.num_candidates()];
        assert!(matches!(build_second_stage(&inst, &v, &sc), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn investment_cost_cases() {
        let inst = toy(vec![2020], 1);
        assert_eq!(inst.investment_cost(&InvestmentPlan::zeros(1)).unwrap(), 0.0);
        let mut spec = toy_spec(vec![2020], 1);
        spec.candidates[0].inv_cost = vec![2.0];
        let inst = PlanningInstance::new(spec).unwrap();
        assert_eq!(inst.investment_cost(&InvestmentPlan::new(vec![3.0])).unwrap(), 6.0);

        let mut spec = toy_spec(vec![2020, 2025], 1);
        spec.discount_rate = 0.1;
        spec.candidates[0].inv_cost = vec![1.0, 1.0];
        let inst = PlanningInstance::new(spec).unwrap();
        let c = inst.investment_cost(&InvestmentPlan::new(vec![2.0, 4.0])).unwrap();
        let hand = 2.0 + 4.0 / 1.1f64.powi(5);
        assert!((c - hand).abs() < 1e-12);
        assert!(matches!(inst.investment_cost(&InvestmentPlan::zeros(1)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn operational_weight_convention() {
        let inst = default_instance();
        // 5-year periods, 5 % discounting, 24-hour runs.
        let w = inst.operational_weight(1, 24);
        assert!((w - 1.05f64.powi(-5) * 5.0 * 365.0).abs() < 1e-9);
        assert_eq!(inst.period_years(2), 5.0);
    }

    #[test]
    fn instance_validation_rules() {
        let mut spec = toy_spec(vec![1], 1);
        spec.shed_penalty = 10.0;
        assert!(PlanningInstance::new(spec).is_err());
        let mut spec = toy_spec(vec![1], 1);
        spec.candidates[0].lifetime = 0;
        assert!(PlanningInstance::new(spec).is_err());
        let mut spec = toy_spec(vec![1], 1);
        spec.candidates[0].preexisting = vec![-1.0];
        assert!(PlanningInstance::new(spec).is_err());
        let mut spec = toy_spec(vec![1], 1);
        spec.candidates.push(spec.candidates[0].clone());
        assert!(PlanningInstance::new(spec).is_err());
        let mut spec = toy_spec(vec![1], 1);
        spec.rows.push(RowSpec { name: "empty".into(), rhs: 1.0, terms: vec![] });
        assert!(PlanningInstance::new(spec).is_err());
    }

    #[test]
    fn default_polytope_is_nonnegative() {
        let inst = default_instance();
        let p = inst.polytope();
        assert!(p.is_nonnegative());
        assert_eq!(p.num_vars(), 33);
        assert!(p.contains(&vec![0.0; 33]));
    }

    #[test]
    fn instance_round_trips_through_toml() {
        let spec = default_instance().into_spec();
        let text = instance_to_toml(&spec).unwrap();
        let back = instance_from_toml(&text).unwrap();
        assert_eq!(back.spec(), &spec);
        assert_eq!(instance_to_toml(back.spec()).unwrap(), text);
    }
}
