use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scenarios::{GeneratorParams, GeneratorProfile, RenewableProfile, ScenarioParams, HOURS_PER_YEAR};

/// Technology class of a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technology {
    Thermal,
    Renewable,
    Storage,
    Transmission,
}

impl Technology {
    pub const ALL: [Technology; 4] =
        [Technology::Thermal, Technology::Renewable, Technology::Storage, Technology::Transmission];

    pub fn name(self) -> &'static str {
        match self {
            Technology::Thermal => "thermal",
            Technology::Renewable => "renewable",
            Technology::Storage => "storage",
            Technology::Transmission => "transmission",
        }
    }
}

/// Operating parameters, one variant per technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CandidateKind {
    Thermal {
        node: String,
        /// currency / MWh
        marginal_cost: f64,
        /// Maximum output change per hour as a fraction of installed MW.
        ramp_rate: f64,
    },
    Renewable {
        node: String,
        marginal_cost: f64,
        profile: RenewableProfile,
    },
    Storage {
        node: String,
        /// Round-trip efficiency, applied on charging.
        efficiency: f64,
        /// MWh of energy per MW of power.
        energy_ratio: f64,
    },
    Line {
        from: String,
        to: String,
        /// MW of transfer capacity per MW invested.
        capacity_factor: f64,
    },
}

impl CandidateKind {
    pub fn technology(&self) -> Technology {
        match self {
            CandidateKind::Thermal { .. } => Technology::Thermal,
            CandidateKind::Renewable { .. } => Technology::Renewable,
            CandidateKind::Storage { .. } => Technology::Storage,
            CandidateKind::Line { .. } => Technology::Transmission,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub id: String,
    /// Undiscounted investment cost per period (currency / MW).
    pub inv_cost: Vec<f64>,
    /// Number of periods a build remains in service after its build period.
    pub lifetime: usize,
    /// Capacity already in place per period (MW).
    pub preexisting: Vec<f64>,
    /// Upper bound on new builds per period (MW).
    pub max_build: Vec<f64>,
    #[serde(flatten)]
    pub kind: CandidateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    /// Mean demand per period (MW).
    pub demand: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub candidate: String,
    pub period: i32,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub name: String,
    pub rhs: f64,
    pub terms: Vec<Term>,
}

/// On-disk description of a planning instance. See `docs/formats.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub format_version: u32,
    pub name: String,
    /// Investment period start years, strictly increasing.
    pub periods: Vec<i32>,
    /// Fraction per year.
    pub discount_rate: f64,
    /// currency / MWh of unserved demand.
    pub shed_penalty: f64,
    pub nodes: Vec<NodeSpec>,
    pub candidates: Vec<CandidateSpec>,
    /// Coupling rows `sum coef * x[candidate, period] <= rhs`.
    pub rows: Vec<RowSpec>,
    pub scenario: ScenarioParams,
}

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

/// `A x <= b, lower <= x <= upper` over the flattened plan vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStagePolytope {
    /// Dense `m x n`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FirstStagePolytope {
    pub fn num_rows(&self) -> usize {
        self.a.len()
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        check_dim(n, self.upper.len())?;
        check_dim(self.a.len(), self.b.len())?;
        for (i, row) in self.a.iter().enumerate() {
            check_dim(n, row.len())?;
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidInstance(format!("polytope row {i} has no nonzero")));
            }
            if row.iter().any(|v| !v.is_finite()) || !self.b[i].is_finite() {
                return Err(Error::InvalidInstance(format!("polytope row {i} is not finite")));
            }
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(Error::InvalidInstance(format!(
                    "bounds of variable {j} are [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        Ok(())
    }

    /// True when `lower = 0` and `A`, `b`, `upper` are entrywise nonnegative,
    /// the regime in which constraint-propagation sampling never fails.
    pub fn is_nonnegative(&self) -> bool {
        self.lower.iter().all(|&l| l == 0.0)
            && self.upper.iter().all(|&u| u >= 0.0)
            && self.b.iter().all(|&b| b >= 0.0)
            && self.a.iter().flatten().all(|&a| a >= 0.0)
    }

    /// Tolerance used by the feasibility check: `1e-9 * max(1, |b|_inf)`.
    pub fn tolerance(&self) -> f64 {
        1e-9 * self.b.iter().fold(1.0f64, |m, b| m.max(b.abs()))
    }

    /// Largest violation of `x` against rows and bounds.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for (row, &b) in self.a.iter().zip(&self.b) {
            let act: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
            worst = worst.max(act - b);
        }
        worst
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.num_vars() && self.max_violation(x) <= self.tolerance()
    }
}

/// First-stage decision: MW built per (candidate, period), flattened
/// candidate-major (`x[candidate * periods + period]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestmentPlan {
    pub x: Vec<f64>,
}

impl InvestmentPlan {
    pub fn new(x: Vec<f64>) -> Self {
        InvestmentPlan { x }
    }

    pub fn zeros(n: usize) -> Self {
        InvestmentPlan { x: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn check_feasible(&self, polytope: &FirstStagePolytope) -> Result<()> {
        check_dim(polytope.num_vars(), self.x.len())?;
        let viol = polytope.max_violation(&self.x);
        if viol > polytope.tolerance() {
            return Err(Error::InvalidInstance(format!("plan violates the polytope by {viol:e}")));
        }
        Ok(())
    }
}

/// Validated planning instance with resolved indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningInstance {
    spec: InstanceSpec,
    polytope: FirstStagePolytope,
    node_index: HashMap<String, usize>,
    /// Resolved node(s) per candidate: (node, second node for lines).
    endpoints: Vec<(usize, usize)>,
    /// Candidate indices of generators, in generator order.
    generators: Vec<usize>,
    generator_of: Vec<Option<usize>>,
    gen_params: GeneratorParams,
}

impl PlanningInstance {
    pub fn new(spec: InstanceSpec) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidInstance(m));
        if spec.format_version != INSTANCE_FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", spec.format_version));
        }
        let t = spec.periods.len();
        if t == 0 {
            return bad("at least one period is required".into());
        }
        if spec.periods.windows(2).any(|w| w[1] <= w[0]) {
            return bad("periods must be strictly increasing".into());
        }
        if !(spec.discount_rate >= 0.0 && spec.discount_rate.is_finite()) {
            return bad("discount_rate must be a nonnegative number".into());
        }
        spec.scenario.validate()?;

        let mut node_index = HashMap::new();
        for (i, node) in spec.nodes.iter().enumerate() {
            if node_index.insert(node.id.clone(), i).is_some() {
                return bad(format!("duplicate node id {}", node.id));
            }
            if node.demand.len() != t || node.demand.iter().any(|&d| !(d >= 0.0)) {
                return bad(format!("node {} needs {t} nonnegative demand values", node.id));
            }
        }
        let lookup = |name: &str, cand: &str| -> Result<usize> {
            node_index.get(name).copied().ok_or_else(|| {
                Error::InvalidInstance(format!("candidate {cand} references unknown node {name}"))
            })
        };

        let mut seen = HashMap::new();
        let mut endpoints = Vec::with_capacity(spec.candidates.len());
        let mut generators = Vec::new();
        let mut generator_of = Vec::with_capacity(spec.candidates.len());
        let mut profiles = Vec::new();
        let mut max_mc = 0.0f64;
        for (i, c) in spec.candidates.iter().enumerate() {
            if seen.insert(c.id.clone(), i).is_some() {
                return bad(format!("duplicate candidate id {}", c.id));
            }
            if c.lifetime < 1 {
                return bad(format!("candidate {} has lifetime 0", c.id));
            }
            for (what, v) in [("inv_cost", &c.inv_cost), ("preexisting", &c.preexisting), ("max_build", &c.max_build)] {
                if v.len() != t {
                    return bad(format!("candidate {} needs {t} {what} values", c.id));
                }
                if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return bad(format!("candidate {} has a negative or non-finite {what}", c.id));
                }
            }
            let mut gen = None;
            let ends = match &c.kind {
                CandidateKind::Thermal { node, marginal_cost, ramp_rate } => {
                    if !(*marginal_cost >= 0.0) || !(*ramp_rate > 0.0) {
                        return bad(format!("candidate {}: bad thermal parameters", c.id));
                    }
                    max_mc = max_mc.max(*marginal_cost);
                    gen = Some(GeneratorProfile::Thermal);
                    let n = lookup(node, &c.id)?;
                    (n, n)
                }
                CandidateKind::Renewable { node, marginal_cost, profile } => {
                    if !(*marginal_cost >= 0.0) || !(profile.mean_cf >= 0.0) {
                        return bad(format!("candidate {}: bad renewable parameters", c.id));
                    }
                    max_mc = max_mc.max(*marginal_cost);
                    gen = Some(GeneratorProfile::Renewable(profile.clone()));
                    let n = lookup(node, &c.id)?;
                    (n, n)
                }
                CandidateKind::Storage { node, efficiency, energy_ratio } => {
                    if !(*efficiency > 0.0 && *efficiency <= 1.0) || !(*energy_ratio > 0.0) {
                        return bad(format!("candidate {}: bad storage parameters", c.id));
                    }
                    let n = lookup(node, &c.id)?;
                    (n, n)
                }
                CandidateKind::Line { from, to, capacity_factor } => {
                    if !(*capacity_factor > 0.0) {
                        return bad(format!("candidate {}: bad line parameters", c.id));
                    }
                    let (a, b) = (lookup(from, &c.id)?, lookup(to, &c.id)?);
                    if a == b {
                        return bad(format!("line {} connects a node to itself", c.id));
                    }
                    (a, b)
                }
            };
            endpoints.push(ends);
            match gen {
                Some(p) => {
                    generator_of.push(Some(generators.len()));
                    generators.push(i);
                    profiles.push(p);
                }
                None => generator_of.push(None),
            }
        }
        if !(spec.shed_penalty > max_mc) {
            return bad(format!(
                "shed_penalty {} must exceed every marginal cost (max {max_mc})",
                spec.shed_penalty
            ));
        }

        let n = spec.candidates.len() * t;
        let period_index = |year: i32| spec.periods.iter().position(|&p| p == year);
        let mut a = Vec::with_capacity(spec.rows.len());
        let mut b = Vec::with_capacity(spec.rows.len());
        for row in &spec.rows {
            let mut dense = vec![0.0; n];
            for term in &row.terms {
                let Some(&ci) = seen.get(&term.candidate) else {
                    return bad(format!("row {} references unknown candidate {}", row.name, term.candidate));
                };
                let Some(pi) = period_index(term.period) else {
                    return bad(format!("row {} references unknown period {}", row.name, term.period));
                };
                dense[ci * t + pi] += term.coef;
            }
            a.push(dense);
            b.push(row.rhs);
        }
        let mut upper = Vec::with_capacity(n);
        for c in &spec.candidates {
            upper.extend_from_slice(&c.max_build);
        }
        let polytope = FirstStagePolytope { a, b, lower: vec![0.0; n], upper };
        polytope.validate()?;

        let gen_params = GeneratorParams {
            params: spec.scenario.clone(),
            mean_demand: (0..t).map(|p| spec.nodes.iter().map(|nd| nd.demand[p]).collect()).collect(),
            generators: profiles,
        };
        Ok(PlanningInstance { spec, polytope, node_index, endpoints, generators, generator_of, gen_params })
    }

    pub fn spec(&self) -> &InstanceSpec {
        &self.spec
    }

    pub fn into_spec(self) -> InstanceSpec {
        self.spec
    }

    pub fn polytope(&self) -> &FirstStagePolytope {
        &self.polytope
    }

    /// Replaces the first-stage polytope (same dimension), e.g. to relax or
    /// tighten the coupling rows in experiments.
    pub fn with_polytope(&self, polytope: FirstStagePolytope) -> Result<Self> {
        check_dim(self.num_vars(), polytope.num_vars())?;
        polytope.validate()?;
        Ok(PlanningInstance { polytope, ..self.clone() })
    }

    pub fn generator_params(&self) -> &GeneratorParams {
        &self.gen_params
    }

    pub fn periods(&self) -> &[i32] {
        &self.spec.periods
    }

    pub fn num_periods(&self) -> usize {
        self.spec.periods.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.spec.nodes.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.spec.candidates.len()
    }

    /// Length of the flattened plan vector.
    pub fn num_vars(&self) -> usize {
        self.num_candidates() * self.num_periods()
    }

    pub fn var_index(&self, candidate: usize, period: usize) -> usize {
        candidate * self.num_periods() + period
    }

    pub fn candidates(&self) -> &[CandidateSpec] {
        &self.spec.candidates
    }

    pub fn candidate(&self, i: usize) -> &CandidateSpec {
        &self.spec.candidates[i]
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.spec.nodes.iter().map(|n| n.id.clone()).collect()
    }

    pub fn node_of(&self, name: &str) -> Option<usize> {
        self.node_index.get(name).copied()
    }

    /// Node (or `(from, to)` for lines) of candidate `i`.
    pub fn endpoints(&self, i: usize) -> (usize, usize) {
        self.endpoints[i]
    }

    pub fn generators(&self) -> &[usize] {
        &self.generators
    }

    pub fn generator_index(&self, candidate: usize) -> Option<usize> {
        self.generator_of[candidate]
    }

    pub fn generator_ids(&self) -> Vec<String> {
        self.generators.iter().map(|&i| self.spec.candidates[i].id.clone()).collect()
    }

    pub fn shed_penalty(&self) -> f64 {
        self.spec.shed_penalty
    }

    pub fn period_index(&self, year: i32) -> Result<usize> {
        self.spec.periods.iter().position(|&p| p == year).ok_or(Error::UnknownPeriod(year))
    }

    /// Present-worth factor of period `t`: `(1 + r)^-(year_t - year_0)`.
    pub fn discount_factor(&self, t: usize) -> f64 {
        let dy = (self.spec.periods[t] - self.spec.periods[0]) as f64;
        (1.0 + self.spec.discount_rate).powf(-dy)
    }

    /// Years represented by period `t`: the gap to the next period, the last
    /// period repeating the previous gap (one year if there is a single
    /// period).
    pub fn period_years(&self, t: usize) -> f64 {
        let p = &self.spec.periods;
        if t + 1 < p.len() {
            (p[t + 1] - p[t]) as f64
        } else if t > 0 {
            (p[t] - p[t - 1]) as f64
        } else {
            1.0
        }
    }

    /// Factor turning the cost of a `horizon`-hour operational run in period
    /// `t` into the discounted operating cost of the whole period.
    pub fn operational_weight(&self, t: usize, horizon: usize) -> f64 {
        self.discount_factor(t) * self.period_years(t) * HOURS_PER_YEAR / horizon as f64
    }

    /// Discounted investment cost coefficient of each plan entry.
    pub fn investment_costs(&self) -> Vec<f64> {
        let t = self.num_periods();
        let mut c = Vec::with_capacity(self.num_vars());
        for cand in &self.spec.candidates {
            for p in 0..t {
                c.push(cand.inv_cost[p] * self.discount_factor(p));
            }
        }
        c
    }

    /// `sum_t c_inv,t' x_t` with discounting.
    pub fn investment_cost(&self, plan: &InvestmentPlan) -> Result<f64> {
        check_dim(self.num_vars(), plan.len())?;
        Ok(self.investment_costs().iter().zip(&plan.x).map(|(c, x)| c * x).sum())
    }

    /// Coefficients of `v[i, t]` in terms of plan entries: builds from
    /// periods `t - lifetime ..= t` count, older ones have retired.
    pub fn capacity_window(&self, candidate: usize, t: usize) -> std::ops::RangeInclusive<usize> {
        let l = self.spec.candidates[candidate].lifetime;
        t.saturating_sub(l)..=t
    }

    /// Cumulative capacity per candidate available in period index `t`.
    pub fn cumulative_capacity_at(&self, plan: &InvestmentPlan, t: usize) -> Result<Vec<f64>> {
        check_dim(self.num_vars(), plan.len())?;
        if t >= self.num_periods() {
            return Err(Error::InvalidInstance(format!("period index {t} out of range")));
        }
        Ok((0..self.num_candidates())
            .map(|i| {
                let built: f64 = self.capacity_window(i, t).map(|tp| plan.x[self.var_index(i, tp)]).sum();
                self.spec.candidates[i].preexisting[t] + built
            })
            .collect())
    }

    /// Cumulative capacity per candidate available in period `year`.
    pub fn cumulative_capacity(&self, plan: &InvestmentPlan, year: i32) -> Result<Vec<f64>> {
        let t = self.period_index(year)?;
        self.cumulative_capacity_at(plan, t)
    }
}
