//! Linear and mixed-binary programming.
//!
//! Callers build a [`LinearProgram`] (always a minimisation) and hand it to
//! anything implementing [`LpSolver`]. The default [`SimplexSolver`] wraps a
//! sparse revised simplex; [`solve_milp`] runs a deterministic best-bound
//! branch and bound over binary variables on top of any `LpSolver`.

mod lp;
mod milp;
mod mps;

pub use lp::SimplexSolver;
pub use milp::{solve_milp, solve_milp_with, MilpOptions};
pub use mps::write_mps;

use std::time::Duration;

/// Absolute primal feasibility tolerance used when certifying solutions.
pub const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (zero when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// `min c'x + offset` subject to rows and `lower <= x <= upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub offset: f64,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max);
        self.rows.iter().map(|r| r.violation(x)).fold(bounds, f64::max)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.objective.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Malformed(format!(
                "{} objective entries but {} lower / {} upper bounds",
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(SolverError::Malformed(format!("objective coefficient {j} is not finite")));
        }
        for (j, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(SolverError::Malformed(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolverError::Malformed(format!("row {i} has non-finite rhs")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(SolverError::Malformed(format!("row {i} has bad entry ({j}, {a})")));
                }
            }
        }
        Ok(())
    }
}

/// A linear program some of whose variables must take values in {0, 1}.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MixedIntegerProgram {
    pub lp: LinearProgram,
    pub binaries: Vec<usize>,
}

impl MixedIntegerProgram {
    pub fn add_binary(&mut self, cost: f64) -> usize {
        let j = self.lp.add_var(cost, 0.0, 1.0);
        self.binaries.push(j);
        j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Objective of `x` (NaN when no point is available).
    pub objective: f64,
    /// Primal point; empty when the status carries no point.
    pub x: Vec<f64>,
    /// MILP only: relative gap between incumbent and best bound.
    pub gap: Option<f64>,
    /// MILP only: best proven lower bound.
    pub bound: Option<f64>,
    /// MILP only: branch-and-bound nodes processed.
    pub nodes: usize,
    /// MILP only: objective of each new incumbent in discovery order.
    pub incumbents: Vec<f64>,
}

impl SolveResult {
    pub fn without_point(status: SolveStatus) -> Self {
        SolveResult {
            status,
            objective: f64::NAN,
            x: Vec::new(),
            gap: None,
            bound: None,
            nodes: 0,
            incumbents: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn has_point(&self) -> bool {
        !self.x.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Anything able to solve a [`LinearProgram`] to optimality.
pub trait LpSolver: Send + Sync {
    fn solve(&self, lp: &LinearProgram) -> Result<SolveResult, SolverError>;

    fn solve_with_limit(
        &self,
        lp: &LinearProgram,
        _limit: Option<Duration>,
    ) -> Result<SolveResult, SolverError> {
        self.solve(lp)
    }
}

/// Solves `lp` with the default simplex backend.
pub fn solve_lp(lp: &LinearProgram) -> Result<SolveResult, SolverError> {
    SimplexSolver::default().solve(lp)
}
