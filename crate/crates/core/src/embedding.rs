//! Embeds a trained surrogate into the planning problem
//! `min c^T x + mu  s.t.  A x <= b, l <= x <= u, mu >= surrogate(x)`.
//!
//! The linear surrogate keeps the problem an LP. The ReLU network becomes a
//! MILP with the big-M encoding
//! `h >= z, h >= 0, h <= z - L (1 - d), h <= U d` per unstable neuron, where
//! `[L, U]` are pre-activation bounds from interval arithmetic, optionally
//! tightened layer by layer by minimizing and maximizing each pre-activation
//! over the LP relaxation built so far. Neurons that are provably active
//! (`L >= 0`) become `h = z`, provably inactive ones (`U <= 0`) become
//! `h = 0`; neither needs a binary.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{FirstStagePolytope, InvestmentPlan};
use crate::optimize::{
    solve_lp, solve_milp_with, write_mps, LinearProgram, MilpOptions, MixedIntegerProgram, Sense,
    SimplexSolver, SolveStatus,
};
use crate::surrogate::{LinearSurrogate, MlpSurrogate, Surrogate};

/// Pre-activation interval of every neuron, layer by layer; the last entry
/// is the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl ActivationBounds {
    pub fn unstable(&self) -> usize {
        let hidden = self.lower.len().saturating_sub(1);
        (0..hidden)
            .map(|k| self.lower[k].iter().zip(&self.upper[k]).filter(|(l, u)| **l < 0.0 && **u > 0.0).count())
            .sum()
    }
}

/// Interval propagation over `lo <= x <= hi`.
pub fn compute_activation_bounds(model: &MlpSurrogate, lo: &[f64], hi: &[f64]) -> Result<ActivationBounds> {
    check_dim(model.dim(), lo.len())?;
    check_dim(model.dim(), hi.len())?;
    if lo.iter().chain(hi).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInstance("activation bounds need finite variable bounds".into()));
    }
    let mut in_lo = model.input.apply(lo);
    let mut in_hi = model.input.apply(hi);
    let mut out = ActivationBounds { lower: Vec::new(), upper: Vec::new() };
    let n_layers = model.layers.len();
    for (k, layer) in model.layers.iter().enumerate() {
        let mut l = layer.bias.clone();
        let mut u = layer.bias.clone();
        for (o, row) in layer.weights.iter().enumerate() {
            for (i, &w) in row.iter().enumerate() {
                if w >= 0.0 {
                    l[o] += w * in_lo[i];
                    u[o] += w * in_hi[i];
                } else {
                    l[o] += w * in_hi[i];
                    u[o] += w * in_lo[i];
                }
            }
        }
        if l.iter().chain(&u).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance(format!("non-finite activation bound in layer {k}")));
        }
        if k + 1 < n_layers {
            in_lo = l.iter().map(|v| v.max(0.0)).collect();
            in_hi = u.iter().map(|v| v.max(0.0)).collect();
        }
        out.lower.push(l);
        out.upper.push(u);
    }
    Ok(out)
}

/// `constant + sum coef * var`.
#[derive(Debug, Clone, PartialEq, Default)]
struct Affine {
    terms: BTreeMap<usize, f64>,
    constant: f64,
}

impl Affine {
    fn var(j: usize) -> Self {
        Affine { terms: BTreeMap::from([(j, 1.0)]), constant: 0.0 }
    }

    fn add_scaled(&mut self, other: &Affine, a: f64) {
        if a == 0.0 {
            return;
        }
        for (&j, &c) in &other.terms {
            *self.terms.entry(j).or_insert(0.0) += a * c;
        }
        self.constant += a * other.constant;
    }

    /// Row `lhs_var * s + self * t {sense} 0` written with the constant moved
    /// to the right.
    fn row_with(&self, extra: &[(usize, f64)], scale: f64) -> (Vec<(usize, f64)>, f64) {
        let mut terms: BTreeMap<usize, f64> = BTreeMap::new();
        for &(j, c) in extra {
            *terms.entry(j).or_insert(0.0) += c;
        }
        for (&j, &c) in &self.terms {
            *terms.entry(j).or_insert(0.0) += scale * c;
        }
        (terms.into_iter().filter(|(_, c)| *c != 0.0).collect(), -scale * self.constant)
    }
}

/// How each hidden neuron was encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronEncoding {
    /// `h = z`, no binary.
    Active,
    /// `h = 0`, no binary.
    Inactive,
    /// Big-M with post-activation and indicator variables.
    BigM { h: usize, d: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluEncoding {
    pub bounds: ActivationBounds,
    /// `[layer][neuron]` for hidden layers.
    pub neurons: Vec<Vec<NeuronEncoding>>,
}

/// The planning problem with a surrogate attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateProblem {
    pub program: MixedIntegerProgram,
    /// Plan variables occupy LP columns `0..n`.
    pub num_plan_vars: usize,
    pub mu: usize,
    pub encoding: Option<ReluEncoding>,
}

impl SurrogateProblem {
    pub fn is_mip(&self) -> bool {
        !self.program.binaries.is_empty()
    }

    /// Pins every plan variable to `x`.
    pub fn fix_plan(&mut self, x: &[f64]) -> Result<()> {
        check_dim(self.num_plan_vars, x.len())?;
        for (j, &v) in x.iter().enumerate() {
            self.program.lp.lower[j] = v;
            self.program.lp.upper[j] = v;
        }
        Ok(())
    }

    pub fn to_mps(&self, name: &str) -> String {
        write_mps(&self.program.lp, &self.program.binaries, name)
    }
}

fn plan_lp(polytope: &FirstStagePolytope, inv_costs: &[f64]) -> Result<LinearProgram> {
    polytope.validate()?;
    check_dim(polytope.num_vars(), inv_costs.len())?;
    let mut lp = LinearProgram::new();
    for j in 0..polytope.num_vars() {
        lp.add_var(inv_costs[j], polytope.lower[j], polytope.upper[j]);
    }
    for (row, &b) in polytope.a.iter().zip(&polytope.b) {
        let coeffs = row.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, &a)| (j, a)).collect();
        lp.add_row(coeffs, Sense::Le, b);
    }
    Ok(lp)
}

/// LP with `mu >= beta^T x + beta0`.
pub fn embed_linear(
    model: &LinearSurrogate,
    polytope: &FirstStagePolytope,
    inv_costs: &[f64],
) -> Result<SurrogateProblem> {
    check_dim(polytope.num_vars(), model.beta.len())?;
    let mut lp = plan_lp(polytope, inv_costs)?;
    let mu = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
    let mut coeffs = vec![(mu, 1.0)];
    coeffs.extend(model.beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, &b)| (j, -b)));
    lp.add_row(coeffs, Sense::Ge, model.beta0);
    Ok(SurrogateProblem {
        program: MixedIntegerProgram { lp, binaries: Vec::new() },
        num_plan_vars: polytope.num_vars(),
        mu,
        encoding: None,
    })
}

/// `[min, max]` of `e` over the relaxation `lp`, or `None` if either solve
/// fails.
fn lp_range(lp: &LinearProgram, e: &Affine) -> Option<(f64, f64)> {
    let mut probe = lp.clone();
    probe.objective.iter_mut().for_each(|c| *c = 0.0);
    for (&j, &c) in &e.terms {
        probe.objective[j] = c;
    }
    let lo = solve_lp(&probe).ok().filter(|r| r.status == SolveStatus::Optimal)?.objective;
    probe.objective.iter_mut().for_each(|c| *c = -*c);
    let hi = -solve_lp(&probe).ok().filter(|r| r.status == SolveStatus::Optimal)?.objective;
    // Pad for solver round-off so the bounds stay valid.
    let pad = |v: f64| 1e-7 * (1.0 + v.abs());
    Some((lo + e.constant - pad(lo), hi + e.constant + pad(hi)))
}

/// MILP with the big-M ReLU encoding of `model`, bounds tightened by LP.
pub fn embed_mlp(model: &MlpSurrogate, polytope: &FirstStagePolytope, inv_costs: &[f64]) -> Result<SurrogateProblem> {
    embed_mlp_with(model, polytope, inv_costs, true)
}

/// As [`embed_mlp`]; `tighten = false` keeps the interval bounds.
pub fn embed_mlp_with(
    model: &MlpSurrogate,
    polytope: &FirstStagePolytope,
    inv_costs: &[f64],
    tighten: bool,
) -> Result<SurrogateProblem> {
    let n = polytope.num_vars();
    check_dim(n, model.dim())?;
    let mut bounds = compute_activation_bounds(model, &polytope.lower, &polytope.upper)?;
    let mut mip = MixedIntegerProgram { lp: plan_lp(polytope, inv_costs)?, binaries: Vec::new() };

    // Standardized inputs as expressions in x.
    let mut h: Vec<Affine> = (0..n)
        .map(|j| {
            let s = model.input.scale[j];
            let mut a = Affine::var(j);
            a.terms.insert(j, 1.0 / s);
            a.constant = -model.input.mean[j] / s;
            a
        })
        .collect();
    let mut neurons = Vec::new();
    let n_layers = model.layers.len();
    let mut output = Affine::default();
    for (k, layer) in model.layers.iter().enumerate() {
        let z: Vec<Affine> = layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, &b)| {
                let mut e = Affine { terms: BTreeMap::new(), constant: b };
                for (hi, &w) in h.iter().zip(row) {
                    e.add_scaled(hi, w);
                }
                e
            })
            .collect();
        if tighten {
            for (o, zo) in z.iter().enumerate() {
                if let Some((lo, hi)) = lp_range(&mip.lp, zo) {
                    bounds.lower[k][o] = bounds.lower[k][o].max(lo);
                    bounds.upper[k][o] = bounds.upper[k][o].min(hi).max(bounds.lower[k][o]);
                }
            }
        }
        if k + 1 == n_layers {
            output = z.into_iter().next().unwrap_or_default();
            break;
        }
        let mut enc = Vec::with_capacity(z.len());
        let mut next = Vec::with_capacity(z.len());
        for (o, zo) in z.into_iter().enumerate() {
            let (l, u) = (bounds.lower[k][o], bounds.upper[k][o]);
            if l >= 0.0 {
                enc.push(NeuronEncoding::Active);
                next.push(zo);
            } else if u <= 0.0 {
                enc.push(NeuronEncoding::Inactive);
                next.push(Affine::default());
            } else {
                let hv = mip.lp.add_var(0.0, 0.0, u);
                let d = mip.add_binary(0.0);
                // h - z >= 0
                let (c, r) = zo.row_with(&[(hv, 1.0)], -1.0);
                mip.lp.add_row(c, Sense::Ge, r);
                // h - z - L d <= -L
                let (c, r) = zo.row_with(&[(hv, 1.0), (d, -l)], -1.0);
                mip.lp.add_row(c, Sense::Le, r - l);
                // h - U d <= 0
                mip.lp.add_row(vec![(hv, 1.0), (d, -u)], Sense::Le, 0.0);
                enc.push(NeuronEncoding::BigM { h: hv, d });
                next.push(Affine::var(hv));
            }
        }
        neurons.push(enc);
        h = next;
    }
    let mu = mip.lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
    let (c, r) = output.row_with(&[(mu, 1.0)], -1.0);
    mip.lp.add_row(c, Sense::Ge, r);
    Ok(SurrogateProblem { program: mip, num_plan_vars: n, mu, encoding: Some(ReluEncoding { bounds, neurons }) })
}

pub fn embed(model: &Surrogate, polytope: &FirstStagePolytope, inv_costs: &[f64]) -> Result<SurrogateProblem> {
    match model {
        Surrogate::Linear(m) => embed_linear(m, polytope, inv_costs),
        Surrogate::Mlp(m) => embed_mlp(m, polytope, inv_costs),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSolution {
    pub plan: InvestmentPlan,
    pub status: SolveStatus,
    /// `c^T x + mu` at the returned point.
    pub objective: f64,
    pub mu: f64,
    pub gap: Option<f64>,
    pub bound: Option<f64>,
    pub nodes: usize,
    pub binaries: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Solves the embedded problem. On a time limit the best incumbent is
/// returned with its gap.
pub fn solve_plan(
    problem: &SurrogateProblem,
    polytope: &FirstStagePolytope,
    gap_tol: f64,
    time_limit: Option<Duration>,
) -> Result<PlanSolution> {
    solve_plan_with(problem, polytope, &MilpOptions { gap_tol, time_limit, ..MilpOptions::default() })
}

/// Like [`solve_plan`] with full branch-and-bound options. A node limit stops
/// the search at the same point on every run; a time limit does not.
pub fn solve_plan_with(
    problem: &SurrogateProblem,
    polytope: &FirstStagePolytope,
    opts: &MilpOptions,
) -> Result<PlanSolution> {
    let start = Instant::now();
    let r = if problem.is_mip() {
        solve_milp_with(&problem.program, &SimplexSolver::default(), opts)?
    } else {
        solve_lp(&problem.program.lp)?
    };
    if !r.has_point() {
        return Err(Error::NotOptimal { context: "surrogate planning problem".into(), status: r.status });
    }
    let n = problem.num_plan_vars;
    let x: Vec<f64> = (0..n).map(|j| r.x[j].clamp(polytope.lower[j], polytope.upper[j])).collect();
    let plan = InvestmentPlan::new(x);
    plan.check_feasible(polytope)?;
    Ok(PlanSolution {
        plan,
        status: r.status,
        objective: r.objective,
        mu: r.x[problem.mu],
        gap: r.gap,
        bound: r.bound,
        nodes: r.nodes,
        binaries: problem.program.binaries.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{Dense, Scaler};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxed(n: usize, hi: f64) -> FirstStagePolytope {
        FirstStagePolytope { a: vec![], b: vec![], lower: vec![0.0; n], upper: vec![hi; n] }
    }

    fn one_neuron(w: Vec<f64>, b: f64) -> MlpSurrogate {
        let n = w.len();
        MlpSurrogate {
            hidden: vec![1],
            input: Scaler::identity(n),
            layers: vec![Dense { weights: vec![w], bias: vec![b] }, Dense { weights: vec![vec![1.0]], bias: vec![0.0] }],
        }
    }

    #[test]
    fn interval_bounds_hand_values() {
        let b = compute_activation_bounds(&one_neuron(vec![1.0], 0.0), &[0.0], &[1.0]).unwrap();
        assert_eq!((b.lower[0][0], b.upper[0][0]), (0.0, 1.0));
        let b = compute_activation_bounds(&one_neuron(vec![1.0, -1.0], 0.0), &[0.0; 2], &[1.0; 2]).unwrap();
        assert_eq!((b.lower[0][0], b.upper[0][0]), (-1.0, 1.0));
        assert!(compute_activation_bounds(&one_neuron(vec![1.0], 0.0), &[0.0], &[f64::INFINITY]).is_err());
    }

    #[test]
    fn nonnegative_net_needs_no_binaries() {
        let net = MlpSurrogate {
            hidden: vec![2],
            input: Scaler::identity(2),
            layers: vec![
                Dense { weights: vec![vec![1.0, 2.0], vec![0.5, 0.0]], bias: vec![0.0, 1.0] },
                Dense { weights: vec![vec![1.0, 1.0]], bias: vec![0.0] },
            ],
        };
        let p = boxed(2, 3.0);
        let prob = embed_mlp(&net, &p, &[1.0, 1.0]).unwrap();
        assert!(!prob.is_mip());
        let bnd = &prob.encoding.as_ref().unwrap().bounds;
        assert!(bnd.lower[0].iter().all(|&l| l >= 0.0));
        let s = solve_plan(&prob, &p, 0.0, None).unwrap();
        // Objective x1 + x2 + (1.5 x1 + 2 x2 + 1) is minimized at 0.
        assert!((s.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn relu_kink_minimization() {
        // f(x) = relu(x - 0.5) on [0, 1] with no investment cost.
        let net = one_neuron(vec![1.0], -0.5);
        let p = boxed(1, 1.0);
        let prob = embed_mlp(&net, &p, &[0.0]).unwrap();
        assert_eq!(prob.program.binaries.len(), 1);
        let s = solve_plan(&prob, &p, 0.0, None).unwrap();
        assert!(s.objective.abs() < 1e-9);
        assert!(s.plan.x[0] <= 0.5 + 1e-9);
    }

    #[test]
    fn fixed_x_reproduces_forward_pass() {
        let net = MlpSurrogate::init(Scaler { mean: vec![1.0; 4], scale: vec![0.5; 4] }, &[6, 4], 11);
        let p = boxed(4, 2.0);
        let base = embed_mlp(&net, &p, &[0.0; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0)).collect();
            let mut prob = base.clone();
            prob.fix_plan(&x).unwrap();
            let s = solve_plan(&prob, &p, 0.0, None).unwrap();
            let want = net.predict(&x).unwrap();
            assert!((s.mu - want).abs() <= 1e-6 * want.abs().max(1.0), "{} vs {want}", s.mu);
        }
    }

    #[test]
    fn bounds_contain_sampled_preactivations() {
        let net = MlpSurrogate::init(Scaler::identity(5), &[16, 8], 2);
        let p = boxed(5, 3.0);
        let b = compute_activation_bounds(&net, &p.lower, &p.upper).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..3.0)).collect();
            for (k, z) in net.preactivations(&x).unwrap().iter().enumerate() {
                for (o, v) in z.iter().enumerate() {
                    assert!(*v >= b.lower[k][o] - 1e-12 && *v <= b.upper[k][o] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn tightening_keeps_the_optimum() {
        let net = MlpSurrogate::init(Scaler::identity(3), &[6, 4], 5);
        let p = FirstStagePolytope { a: vec![vec![1.0, 1.0, 1.0]], b: vec![2.0], lower: vec![0.0; 3], upper: vec![2.0; 3] };
        let c = [0.3, -0.2, 0.1];
        let loose = embed_mlp_with(&net, &p, &c, false).unwrap();
        let tight = embed_mlp_with(&net, &p, &c, true).unwrap();
        assert!(tight.program.binaries.len() <= loose.program.binaries.len());
        let (bl, bt) = (&loose.encoding.as_ref().unwrap().bounds, &tight.encoding.as_ref().unwrap().bounds);
        for k in 0..bl.lower.len() {
            for o in 0..bl.lower[k].len() {
                assert!(bt.lower[k][o] >= bl.lower[k][o] && bt.upper[k][o] <= bl.upper[k][o]);
            }
        }
        let a = solve_plan(&loose, &p, 0.0, None).unwrap();
        let b = solve_plan(&tight, &p, 0.0, None).unwrap();
        assert!((a.objective - b.objective).abs() <= 1e-7 * a.objective.abs().max(1.0));
    }

    #[test]
    fn linear_embedding_cases() {
        let p = boxed(2, 1.0);
        // beta = 0: minimize c^T x alone.
        let m = LinearSurrogate { beta: vec![0.0, 0.0], beta0: 5.0, ridge: 0.0 };
        let s = solve_plan(&embed_linear(&m, &p, &[1.0, -1.0]).unwrap(), &p, 0.0, None).unwrap();
        assert_eq!(s.plan.x, vec![0.0, 1.0]);
        assert!((s.mu - 5.0).abs() < 1e-9);
        // Vertex enumeration over the box corners.
        let m = LinearSurrogate { beta: vec![-3.0, 0.5], beta0: 1.0, ridge: 0.0 };
        let c = [1.0, 1.0];
        let s = solve_plan(&embed_linear(&m, &p, &c).unwrap(), &p, 0.0, None).unwrap();
        let best = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
            .iter()
            .map(|x| c[0] * x[0] + c[1] * x[1] + m.predict(x).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!((s.objective - best).abs() < 1e-9);
        // beta = -c: objective constant.
        let m = LinearSurrogate { beta: vec![-1.0, -1.0], beta0: 0.0, ridge: 0.0 };
        let s = solve_plan(&embed_linear(&m, &p, &[1.0, 1.0]).unwrap(), &p, 0.0, None).unwrap();
        assert!(s.objective.abs() < 1e-9);
        assert!(embed_linear(&m, &boxed(3, 1.0), &[1.0; 3]).is_err());
    }

    #[test]
    fn infeasible_polytope_propagates() {
        let p = FirstStagePolytope { a: vec![vec![1.0]], b: vec![-1.0], lower: vec![0.0], upper: vec![1.0] };
        let m = LinearSurrogate { beta: vec![1.0], beta0: 0.0, ridge: 0.0 };
        match solve_plan(&embed_linear(&m, &p, &[1.0]).unwrap(), &p, 0.0, None) {
            Err(Error::NotOptimal { status, .. }) => assert_eq!(status, SolveStatus::Infeasible),
            other => panic!("{other:?}"),
        }
    }
}
