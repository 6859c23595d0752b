use std::time::Duration;

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolutionStatus};

use super::{LinearProgram, LpSolver, Sense, SolveResult, SolveStatus, SolverError, FEAS_TOL};

/// Bounded-variable sparse revised simplex (backed by `microlp`).
///
/// Every optimal point is re-checked against the original program; a point
/// that violates a row by more than the scaled tolerance is reported as a
/// numerical failure rather than returned.
#[derive(Debug, Clone)]
pub struct SimplexSolver {
    pub time_limit: Option<Duration>,
    /// Relative row tolerance used to certify returned points.
    pub certify_tol: f64,
}

impl Default for SimplexSolver {
    fn default() -> Self {
        SimplexSolver { time_limit: None, certify_tol: 1e-6 }
    }
}

impl LpSolver for SimplexSolver {
    fn solve(&self, lp: &LinearProgram) -> Result<SolveResult, SolverError> {
        self.solve_with_limit(lp, self.time_limit)
    }

    fn solve_with_limit(
        &self,
        lp: &LinearProgram,
        limit: Option<Duration>,
    ) -> Result<SolveResult, SolverError> {
        lp.validate()?;
        if lp.lower.iter().zip(&lp.upper).any(|(lo, hi)| lo > hi) {
            return Ok(SolveResult::without_point(SolveStatus::Infeasible));
        }
        // Empty rows are decided here; the backend rejects them.
        for row in lp.rows.iter().filter(|r| r.coeffs.iter().all(|&(_, a)| a == 0.0)) {
            let ok = match row.sense {
                Sense::Le => 0.0 <= row.rhs + FEAS_TOL,
                Sense::Ge => 0.0 >= row.rhs - FEAS_TOL,
                Sense::Eq => row.rhs.abs() <= FEAS_TOL,
            };
            if !ok {
                return Ok(SolveResult::without_point(SolveStatus::Infeasible));
            }
        }
        if lp.num_vars() == 0 {
            return Ok(point_result(lp, Vec::new()));
        }

        let mut problem = Problem::new(OptimizationDirection::Minimize);
        if let Some(limit) = limit {
            problem.set_time_limit(limit);
        }
        let vars: Vec<_> = (0..lp.num_vars())
            .map(|j| problem.add_var(lp.objective[j], (lp.lower[j], lp.upper[j])))
            .collect();
        for row in &lp.rows {
            let terms: Vec<_> = row
                .coeffs
                .iter()
                .filter(|&&(_, a)| a != 0.0)
                .map(|&(j, a)| (vars[j], a))
                .collect();
            if terms.is_empty() {
                continue;
            }
            let op = match row.sense {
                Sense::Le => ComparisonOp::Le,
                Sense::Ge => ComparisonOp::Ge,
                Sense::Eq => ComparisonOp::Eq,
            };
            problem.add_constraint(terms.as_slice(), op, row.rhs);
        }

        let outcome = match problem.solve() {
            Ok(outcome) => outcome,
            Err(microlp::Error::Infeasible) => {
                return Ok(SolveResult::without_point(SolveStatus::Infeasible))
            }
            Err(microlp::Error::Unbounded) => {
                return Ok(SolveResult::without_point(SolveStatus::Unbounded))
            }
            Err(e) => return Err(SolverError::Numerical(e.to_string())),
        };
        let Some(solution) = outcome.solution() else {
            return Ok(SolveResult::without_point(SolveStatus::IterationLimit));
        };
        let mut x: Vec<f64> = vars.iter().map(|&v| solution[v]).collect();
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(lp.lower[j], lp.upper[j]);
        }
        for (i, row) in lp.rows.iter().enumerate() {
            let scale = 1.0 + row.rhs.abs() + row.coeffs.iter().map(|&(j, a)| (a * x[j]).abs()).fold(0.0, f64::max);
            let viol = row.violation(&x);
            if viol > self.certify_tol * scale {
                return Err(SolverError::Numerical(format!(
                    "row {i} violated by {viol:e} at returned point"
                )));
            }
        }
        let mut result = point_result(lp, x);
        if solution.status() != SolutionStatus::Optimal {
            result.status = SolveStatus::IterationLimit;
        }
        Ok(result)
    }
}

fn point_result(lp: &LinearProgram, x: Vec<f64>) -> SolveResult {
    SolveResult {
        status: SolveStatus::Optimal,
        objective: lp.evaluate(&x),
        x,
        gap: None,
        bound: None,
        nodes: 0,
        incumbents: Vec::new(),
    }
}
