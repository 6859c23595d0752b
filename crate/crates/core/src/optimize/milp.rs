use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::{
    LinearProgram, LpSolver, MixedIntegerProgram, SimplexSolver, SolveResult, SolveStatus,
    SolverError,
};

#[derive(Debug, Clone)]
pub struct MilpOptions {
    /// Stop once `(incumbent - bound) / |incumbent|` falls to this value.
    pub gap_tol: f64,
    pub time_limit: Option<Duration>,
    /// A binary within this distance of 0 or 1 counts as integral.
    pub int_tol: f64,
    /// Run the rounding heuristic on every k-th node (the root always).
    pub heuristic_every: usize,
    pub max_nodes: Option<usize>,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions {
            gap_tol: 0.01,
            time_limit: None,
            int_tol: 1e-6,
            heuristic_every: 16,
            max_nodes: None,
        }
    }
}

/// Branch and bound with the default simplex backend.
pub fn solve_milp(
    mip: &MixedIntegerProgram,
    gap_tol: f64,
    time_limit: Option<Duration>,
) -> Result<SolveResult, SolverError> {
    let opts = MilpOptions { gap_tol, time_limit, ..MilpOptions::default() };
    solve_milp_with(mip, &SimplexSolver::default(), &opts)
}

struct Node {
    bound: f64,
    id: usize,
    /// Per binary (in `order`): fixed value or None.
    fixed: Vec<Option<bool>>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: reverse so the lowest bound (then oldest id)
    // pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    mip: &'a MixedIntegerProgram,
    solver: &'a dyn LpSolver,
    opts: &'a MilpOptions,
    /// Binary variable indices, ascending.
    order: Vec<usize>,
    start: Instant,
    nodes: usize,
    incumbent: Option<(f64, Vec<f64>)>,
    trace: Vec<f64>,
}

enum NodeLp {
    Solved(f64, Vec<f64>),
    Infeasible,
    Unbounded,
    OutOfTime,
}

impl<'a> Search<'a> {
    fn remaining(&self) -> Option<Option<Duration>> {
        match self.opts.time_limit {
            None => Some(None),
            Some(limit) => limit.checked_sub(self.start.elapsed()).map(Some),
        }
    }

    fn restricted(&self, fixed: &[Option<bool>]) -> LinearProgram {
        let mut lp = self.mip.lp.clone();
        for (&j, f) in self.order.iter().zip(fixed) {
            // Binaries are always boxed into [0, 1], even if the caller left
            // wider bounds.
            let (lo, hi) = match f {
                Some(true) => (1.0, 1.0),
                Some(false) => (0.0, 0.0),
                None => (lp.lower[j].max(0.0).ceil(), lp.upper[j].min(1.0).floor()),
            };
            lp.lower[j] = lo;
            lp.upper[j] = hi;
        }
        lp
    }

    fn solve_node(&mut self, fixed: &[Option<bool>]) -> Result<NodeLp, SolverError> {
        let Some(limit) = self.remaining() else {
            return Ok(NodeLp::OutOfTime);
        };
        let lp = self.restricted(fixed);
        let r = self.solver.solve_with_limit(&lp, limit)?;
        Ok(match r.status {
            SolveStatus::Optimal => NodeLp::Solved(r.objective, r.x),
            SolveStatus::Infeasible => NodeLp::Infeasible,
            SolveStatus::Unbounded => NodeLp::Unbounded,
            SolveStatus::IterationLimit => NodeLp::OutOfTime,
        })
    }

    fn is_integral(&self, x: &[f64]) -> bool {
        self.order
            .iter()
            .all(|&j| x[j].min(1.0 - x[j]).abs() <= self.opts.int_tol)
    }

    /// Most fractional binary; ties go to the lowest variable index.
    fn branch_position(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &j) in self.order.iter().enumerate() {
            let frac = x[j].min(1.0 - x[j]);
            if frac.abs() <= self.opts.int_tol {
                continue;
            }
            if best.is_none_or(|(_, f)| frac > f) {
                best = Some((pos, frac));
            }
        }
        best.map(|(pos, _)| pos)
    }

    fn offer(&mut self, objective: f64, x: Vec<f64>) {
        let better = self.incumbent.as_ref().is_none_or(|(best, _)| objective < *best);
        if better {
            self.trace.push(objective);
            self.incumbent = Some((objective, x));
        }
    }

    fn rounding_heuristic(&mut self, x: &[f64], fixed: &[Option<bool>]) -> Result<(), SolverError> {
        let rounded: Vec<Option<bool>> = self
            .order
            .iter()
            .zip(fixed)
            .map(|(&j, f)| Some(f.unwrap_or(x[j] >= 0.5)))
            .collect();
        if let NodeLp::Solved(obj, xr) = self.solve_node(&rounded)? {
            self.offer(obj, xr);
        }
        Ok(())
    }

    fn gap(&self, bound: f64) -> Option<f64> {
        self.incumbent
            .as_ref()
            .map(|(inc, _)| ((inc - bound) / inc.abs().max(1e-10)).max(0.0))
    }
}

/// Best-bound branch and bound over the binaries of `mip`.
///
/// Branches on the most fractional binary (lowest index on ties) and expands
/// the open node with the smallest relaxation bound (oldest first on ties), so
/// the search is fully deterministic. Incumbents only ever improve. When the
/// time or node budget runs out the best incumbent is returned with status
/// `IterationLimit` and its achieved gap.
pub fn solve_milp_with(
    mip: &MixedIntegerProgram,
    solver: &dyn LpSolver,
    opts: &MilpOptions,
) -> Result<SolveResult, SolverError> {
    mip.lp.validate()?;
    let n = mip.lp.num_vars();
    if let Some(&j) = mip.binaries.iter().find(|&&j| j >= n) {
        return Err(SolverError::Malformed(format!("binary index {j} out of range ({n} vars)")));
    }
    let mut order = mip.binaries.clone();
    order.sort_unstable();
    order.dedup();

    let mut search = Search {
        mip,
        solver,
        opts,
        order,
        start: Instant::now(),
        nodes: 0,
        incumbent: None,
        trace: Vec::new(),
    };
    let root_fixed = vec![None; search.order.len()];
    let (root_bound, root_x) = match search.solve_node(&root_fixed)? {
        NodeLp::Solved(b, x) => (b, x),
        NodeLp::Infeasible => return Ok(SolveResult::without_point(SolveStatus::Infeasible)),
        NodeLp::Unbounded => return Ok(SolveResult::without_point(SolveStatus::Unbounded)),
        NodeLp::OutOfTime => return Ok(SolveResult::without_point(SolveStatus::IterationLimit)),
    };
    search.nodes = 1;

    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut exhausted_budget = false;
    let mut final_bound = root_bound;

    if search.is_integral(&root_x) {
        search.offer(root_bound, root_x);
    } else {
        search.rounding_heuristic(&root_x, &root_fixed)?;
        heap.push(Node { bound: root_bound, id: next_id, fixed: root_fixed, x: root_x });
        next_id += 1;
    }

    while let Some(node) = heap.pop() {
        final_bound = node.bound;
        if let Some(gap) = search.gap(node.bound) {
            let inc = search.incumbent.as_ref().map(|(v, _)| *v).unwrap_or(f64::INFINITY);
            let exact_prune = node.bound >= inc - 1e-9 * inc.abs().max(1.0);
            if gap <= opts.gap_tol || exact_prune {
                // Every open node is at least as bad as this one.
                final_bound = node.bound.min(inc);
                heap.clear();
                break;
            }
        }
        if search.remaining().is_none() || opts.max_nodes.is_some_and(|m| search.nodes >= m) {
            exhausted_budget = true;
            heap.push(node);
            break;
        }
        let Some(pos) = search.branch_position(&node.x) else {
            continue;
        };
        for value in [false, true] {
            let mut fixed = node.fixed.clone();
            fixed[pos] = Some(value);
            search.nodes += 1;
            match search.solve_node(&fixed)? {
                NodeLp::Solved(bound, x) => {
                    if search.incumbent.as_ref().is_some_and(|(inc, _)| bound >= *inc) {
                        continue;
                    }
                    if search.is_integral(&x) {
                        search.offer(bound, x);
                    } else {
                        if search.nodes % opts.heuristic_every.max(1) == 0 {
                            search.rounding_heuristic(&x, &fixed)?;
                        }
                        heap.push(Node { bound, id: next_id, fixed, x });
                        next_id += 1;
                    }
                }
                NodeLp::Infeasible => {}
                NodeLp::Unbounded => {
                    return Ok(SolveResult::without_point(SolveStatus::Unbounded));
                }
                NodeLp::OutOfTime => exhausted_budget = true,
            }
        }
        if exhausted_budget {
            // The node's children may be incomplete; keep its bound open.
            heap.push(node);
            break;
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let Some((inc_obj, inc_x)) = search.incumbent.take() else {
        let status = if exhausted_budget { SolveStatus::IterationLimit } else { SolveStatus::Infeasible };
        let mut r = SolveResult::without_point(status);
        r.nodes = search.nodes;
        return Ok(r);
    };
    let bound = if exhausted_budget { open_bound.min(inc_obj) } else { final_bound.min(inc_obj) };

    // Polish: re-solve with binaries pinned to their rounded values so the
    // continuous part is exactly consistent with an integral assignment.
    let pinned: Vec<Option<bool>> = search.order.iter().map(|&j| Some(inc_x[j] >= 0.5)).collect();
    let (objective, x) = match search.solve_node(&pinned) {
        Ok(NodeLp::Solved(obj, x)) if obj <= inc_obj + 1e-9 * inc_obj.abs().max(1.0) => (obj, x),
        _ => (inc_obj, inc_x),
    };
    let gap = ((objective - bound) / objective.abs().max(1e-10)).max(0.0);
    Ok(SolveResult {
        status: if exhausted_budget { SolveStatus::IterationLimit } else { SolveStatus::Optimal },
        objective,
        x,
        gap: Some(gap),
        bound: Some(bound),
        nodes: search.nodes,
        incumbents: search.trace,
    })
}
