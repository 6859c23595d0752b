use crate::error::{check_dim, Error, Result};
use crate::model::{CandidateKind, PlanningInstance};
use crate::optimize::{LinearProgram, LpSolver, Sense, SolveStatus};
use crate::scenarios::Scenario;

/// Installed capacity of one candidate as an affine expression
/// `constant + sum coef * lp_var`. Fixed capacities have no terms and become
/// variable bounds; expressions with terms become rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl CapacityExpr {
    pub fn fixed(constant: f64) -> Self {
        CapacityExpr { constant, terms: Vec::new() }
    }

    fn is_fixed(&self) -> bool {
        self.terms.is_empty()
    }

    /// `lhs_terms - scale * self {sense} scale * constant`.
    fn bound_row(&self, lp: &mut LinearProgram, mut lhs: Vec<(usize, f64)>, scale: f64, sense: Sense) {
        lhs.extend(self.terms.iter().map(|&(j, a)| (j, -scale * a)));
        lp.add_row(lhs, sense, scale * self.constant);
    }
}

/// Capacity expressions for period `t` with first-stage variables living at
/// `x_offset..x_offset + n` of an enclosing LP.
pub fn capacity_exprs(instance: &PlanningInstance, t: usize, x_offset: usize) -> Vec<CapacityExpr> {
    (0..instance.num_candidates())
        .map(|i| CapacityExpr {
            constant: instance.candidate(i).preexisting[t],
            terms: instance
                .capacity_window(i, t)
                .map(|tp| (x_offset + instance.var_index(i, tp), 1.0))
                .collect(),
        })
        .collect()
}

/// Variable indices of one operational block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OperationsBlock {
    /// `[generator][hour]`
    pub generation: Vec<Vec<usize>>,
    /// `[node][hour]`
    pub shed: Vec<Vec<usize>>,
    /// `[line candidate][hour]`, keyed by candidate order among lines.
    pub flow: Vec<Vec<usize>>,
    /// `[storage candidate][hour]` state of charge.
    pub state_of_charge: Vec<Vec<usize>>,
    /// Balance row per `[node][hour]`.
    pub balance_rows: Vec<Vec<usize>>,
}

fn check_scenario(instance: &PlanningInstance, scenario: &Scenario) -> Result<()> {
    if scenario.horizon == 0 {
        return Err(Error::InvalidScenario("horizon must be at least one hour".into()));
    }
    if scenario.num_nodes() != instance.num_nodes() {
        return Err(Error::InvalidScenario(format!(
            "scenario has {} nodes, instance has {}",
            scenario.num_nodes(),
            instance.num_nodes()
        )));
    }
    if scenario.availability.len() != instance.generators().len() {
        return Err(Error::InvalidScenario(format!(
            "scenario has {} availability series, instance has {} generators",
            scenario.availability.len(),
            instance.generators().len()
        )));
    }
    let h = scenario.horizon;
    if scenario.demand.iter().chain(&scenario.availability).any(|s| s.len() != h) {
        return Err(Error::InvalidScenario(format!("series lengths differ from horizon {h}")));
    }
    Ok(())
}

/// Appends the hourly dispatch model of one scenario to `lp`.
///
/// Per hour: thermal and renewable output bounded by availability times
/// capacity, thermal ramping between consecutive hours, storage charge,
/// discharge and state of charge (starting empty) bounded by capacity,
/// transshipment flows bounded by line capacity, load shedding, and a power
/// balance equality per node. Every cost coefficient is multiplied by
/// `weight`.
pub fn add_operations(
    lp: &mut LinearProgram,
    instance: &PlanningInstance,
    scenario: &Scenario,
    caps: &[CapacityExpr],
    weight: f64,
) -> Result<OperationsBlock> {
    check_scenario(instance, scenario)?;
    check_dim(instance.num_candidates(), caps.len())?;
    let hours = scenario.horizon;
    let nodes = instance.num_nodes();
    let mut block = OperationsBlock {
        generation: vec![Vec::with_capacity(hours); instance.generators().len()],
        shed: vec![Vec::with_capacity(hours); nodes],
        ..OperationsBlock::default()
    };
    let lines: Vec<usize> = (0..instance.num_candidates())
        .filter(|&i| matches!(instance.candidate(i).kind, CandidateKind::Line { .. }))
        .collect();
    let stores: Vec<usize> = (0..instance.num_candidates())
        .filter(|&i| matches!(instance.candidate(i).kind, CandidateKind::Storage { .. }))
        .collect();
    block.flow = vec![Vec::with_capacity(hours); lines.len()];
    block.state_of_charge = vec![Vec::with_capacity(hours); stores.len()];
    block.balance_rows = vec![Vec::with_capacity(hours); nodes];

    let inf = f64::INFINITY;
    for h in 0..hours {
        let mut balance: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes];
        for (i, cand) in instance.candidates().iter().enumerate() {
            let cap = &caps[i];
            let (node, other) = instance.endpoints(i);
            match &cand.kind {
                CandidateKind::Thermal { marginal_cost: mc, .. }
                | CandidateKind::Renewable { marginal_cost: mc, .. } => {
                    let g = instance.generator_index(i).expect("generator index");
                    let rho = scenario.availability[g][h];
                    let var = if cap.is_fixed() {
                        lp.add_var(weight * mc, 0.0, (rho * cap.constant).max(0.0))
                    } else {
                        let var = lp.add_var(weight * mc, 0.0, inf);
                        cap.bound_row(lp, vec![(var, 1.0)], rho, Sense::Le);
                        var
                    };
                    if let (CandidateKind::Thermal { ramp_rate, .. }, Some(&prev)) =
                        (&cand.kind, block.generation[g].last())
                    {
                        if cap.is_fixed() {
                            let r = ramp_rate * cap.constant;
                            lp.add_row(vec![(var, 1.0), (prev, -1.0)], Sense::Le, r);
                            lp.add_row(vec![(prev, 1.0), (var, -1.0)], Sense::Le, r);
                        } else {
                            cap.bound_row(lp, vec![(var, 1.0), (prev, -1.0)], *ramp_rate, Sense::Le);
                            cap.bound_row(lp, vec![(prev, 1.0), (var, -1.0)], *ramp_rate, Sense::Le);
                        }
                    }
                    block.generation[g].push(var);
                    balance[node].push((var, 1.0));
                }
                CandidateKind::Storage { efficiency, energy_ratio, .. } => {
                    let s = stores.iter().position(|&k| k == i).expect("storage index");
                    let (charge, discharge, soc) = if cap.is_fixed() {
                        let c = cap.constant.max(0.0);
                        (
                            lp.add_var(0.0, 0.0, c),
                            lp.add_var(0.0, 0.0, c),
                            lp.add_var(0.0, 0.0, energy_ratio * c),
                        )
                    } else {
                        let vars = (lp.add_var(0.0, 0.0, inf), lp.add_var(0.0, 0.0, inf), lp.add_var(0.0, 0.0, inf));
                        cap.bound_row(lp, vec![(vars.0, 1.0)], 1.0, Sense::Le);
                        cap.bound_row(lp, vec![(vars.1, 1.0)], 1.0, Sense::Le);
                        cap.bound_row(lp, vec![(vars.2, 1.0)], *energy_ratio, Sense::Le);
                        vars
                    };
                    let mut dynamics = vec![(soc, 1.0), (charge, -efficiency), (discharge, 1.0)];
                    if let Some(&prev) = block.state_of_charge[s].last() {
                        dynamics.push((prev, -1.0));
                    }
                    lp.add_row(dynamics, Sense::Eq, 0.0);
                    block.state_of_charge[s].push(soc);
                    balance[node].push((discharge, 1.0));
                    balance[node].push((charge, -1.0));
                }
                CandidateKind::Line { capacity_factor, .. } => {
                    let l = lines.iter().position(|&k| k == i).expect("line index");
                    let flow = if cap.is_fixed() {
                        let c = (capacity_factor * cap.constant).max(0.0);
                        lp.add_var(0.0, -c, c)
                    } else {
                        let f = lp.add_var(0.0, -inf, inf);
                        cap.bound_row(lp, vec![(f, 1.0)], *capacity_factor, Sense::Le);
                        cap.bound_row(lp, vec![(f, -1.0)], *capacity_factor, Sense::Le);
                        f
                    };
                    block.flow[l].push(flow);
                    balance[node].push((flow, -1.0));
                    balance[other].push((flow, 1.0));
                }
            }
        }
        for (n, mut terms) in balance.into_iter().enumerate() {
            let shed = lp.add_var(weight * instance.shed_penalty(), 0.0, inf);
            block.shed[n].push(shed);
            terms.push((shed, 1.0));
            let row = lp.add_row(terms, Sense::Eq, scenario.demand[n][h]);
            block.balance_rows[n].push(row);
        }
    }
    Ok(block)
}

/// Production-cost LP of one scenario under fixed cumulative capacities.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationalLp {
    pub lp: LinearProgram,
    pub block: OperationsBlock,
    pub horizon: usize,
}

/// Builds the production-cost LP `min sum_h c_prod(y_h)` over the dispatch
/// set defined by capacities `v` (one entry per candidate) and `scenario`.
pub fn build_second_stage(
    instance: &PlanningInstance,
    v: &[f64],
    scenario: &Scenario,
) -> Result<OperationalLp> {
    check_dim(instance.num_candidates(), v.len())?;
    if let Some(i) = v.iter().position(|&c| !(c >= 0.0)) {
        return Err(Error::InvalidInstance(format!("capacity of candidate {i} is {}", v[i])));
    }
    let caps: Vec<_> = v.iter().map(|&c| CapacityExpr::fixed(c)).collect();
    let mut lp = LinearProgram::new();
    let block = add_operations(&mut lp, instance, scenario, &caps, 1.0)?;
    Ok(OperationalLp { lp, block, horizon: scenario.horizon })
}

/// Optimal production cost of `scenario` under capacities `v`, unweighted.
pub fn evaluate_q(
    instance: &PlanningInstance,
    v: &[f64],
    scenario: &Scenario,
    solver: &dyn LpSolver,
) -> Result<f64> {
    let op = build_second_stage(instance, v, scenario)?;
    let r = solver.solve(&op.lp)?;
    match r.status {
        SolveStatus::Optimal if r.objective.is_finite() => Ok(r.objective),
        status => Err(Error::NotOptimal { context: "production-cost LP".into(), status }),
    }
}
