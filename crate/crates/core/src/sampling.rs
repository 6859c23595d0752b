//! Constraint-propagation sampling of feasible first-stage plans.
//!
//! Variables are fixed one at a time. Before a variable is drawn its interval
//! is tightened against every row it appears in, assuming all still-free
//! variables sit at the end of their intervals that relaxes the row the most;
//! the draw is uniform on what remains. After each draw the right-hand sides
//! are reduced and the intervals of the free variables sharing a row with it
//! are tightened again. With `lower = 0` and nonnegative `A`, `b`, `upper`
//! every interval stays nonempty and every sample is feasible.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FirstStagePolytope, InvestmentPlan};
use crate::parallel::Executor;

/// How the next variable to draw is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Fresh uniformly random permutation per sample.
    #[default]
    Random,
    /// Index order `0..n`.
    Fixed,
}

/// Working state while one sample is being built.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `true` for variables not yet drawn.
    pub remaining: Vec<bool>,
    pub x: Vec<f64>,
}

impl SamplerState {
    pub fn new(polytope: &FirstStagePolytope) -> Self {
        let n = polytope.num_vars();
        SamplerState {
            lower: polytope.lower.clone(),
            upper: polytope.upper.clone(),
            rhs: polytope.b.clone(),
            remaining: vec![true; n],
            x: vec![0.0; n],
        }
    }

    pub fn sampled(&self) -> Vec<usize> {
        (0..self.remaining.len()).filter(|&j| !self.remaining[j]).collect()
    }
}

/// Row/column sparsity of the polytope, built once per sampling run.
#[derive(Debug, Clone)]
struct Structure {
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl Structure {
    fn new(p: &FirstStagePolytope) -> Self {
        let mut rows = Vec::with_capacity(p.num_rows());
        let mut cols = vec![Vec::new(); p.num_vars()];
        for (r, row) in p.a.iter().enumerate() {
            let nz: Vec<(usize, f64)> = row.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, &a)| (j, a)).collect();
            for &(j, a) in &nz {
                cols[j].push((r, a));
            }
            rows.push(nz);
        }
        Structure { rows, cols }
    }
}

/// Bound on `x_i` implied by row `r` when every other free variable is at
/// the end of its interval that relaxes the row the most:
/// `b'_r / a_ri - sum_{j free, a_rj > 0} a_rj l'_j / a_ri - sum_{j free, a_rj < 0} a_rj u'_j / a_ri`.
///
/// `i` itself is excluded from the free set. The result is an upper bound
/// when `a_ri > 0` and a lower bound when `a_ri < 0`.
pub fn propagate_bound(
    polytope: &FirstStagePolytope,
    r: usize,
    i: usize,
    state: &SamplerState,
) -> Result<f64> {
    let a_ri = polytope.a[r][i];
    if a_ri == 0.0 {
        return Err(Error::InvalidInstance(format!("row {r} has no coefficient on variable {i}")));
    }
    let row: Vec<(usize, f64)> = polytope.a[r].iter().copied().enumerate().filter(|(_, a)| *a != 0.0).collect();
    Ok(implied_bound(&row, a_ri, i, state, state.rhs[r]))
}

fn implied_bound(row: &[(usize, f64)], a_ri: f64, i: usize, state: &SamplerState, rhs: f64) -> f64 {
    let mut min_activity = 0.0;
    for &(j, a) in row {
        if j == i || !state.remaining[j] {
            continue;
        }
        min_activity += if a > 0.0 { a * state.lower[j] } else { a * state.upper[j] };
    }
    (rhs - min_activity) / a_ri
}

/// Tightens `[l'_j, u'_j]` against every row containing `j`. Returns
/// `(new lower, new upper)`.
fn tightened(s: &Structure, j: usize, state: &SamplerState) -> (f64, f64) {
    let (mut lo, mut hi) = (state.lower[j], state.upper[j]);
    for &(r, a) in &s.cols[j] {
        let f = implied_bound(&s.rows[r], a, j, state, state.rhs[r]);
        if a > 0.0 {
            hi = hi.min(f);
        } else {
            lo = lo.max(f);
        }
    }
    (lo, hi)
}

#[derive(Debug, Default, Clone, Copy, PartialEq)]
struct DrawStats {
    empty_intervals: usize,
}

fn draw_one(
    polytope: &FirstStagePolytope,
    s: &Structure,
    order: &[usize],
    rng: &mut ChaCha8Rng,
    observe: &mut dyn FnMut(&SamplerState),
) -> Result<(Vec<f64>, DrawStats)> {
    let mut state = SamplerState::new(polytope);
    let mut stats = DrawStats::default();
    for &i in order {
        state.remaining[i] = false;
        let (lo, hi) = tightened(s, i, &state);
        state.lower[i] = lo;
        state.upper[i] = hi;
        let value = if lo <= hi {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidInstance(format!(
                    "variable {i} has unbounded sampling interval [{lo}, {hi}]"
                )));
            }
            lo + (hi - lo) * rng.random::<f64>()
        } else {
            stats.empty_intervals += 1;
            lo.clamp(polytope.lower[i], polytope.upper[i])
        };
        state.x[i] = value;
        observe(&state);
        for &(r, a) in &s.cols[i] {
            state.rhs[r] -= a * value;
            for &(j, _) in &s.rows[r] {
                if state.remaining[j] {
                    let (lo, hi) = tightened(s, j, &state);
                    state.lower[j] = lo;
                    state.upper[j] = hi;
                }
            }
            observe(&state);
        }
    }
    Ok((state.x, stats))
}

fn sample_rng(seed: u64, k: u64, attempt: u64, stream: u64) -> ChaCha8Rng {
    let mut seed_bytes = [0u8; 32];
    seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
    seed_bytes[8..16].copy_from_slice(&k.to_le_bytes());
    seed_bytes[16..24].copy_from_slice(&attempt.to_le_bytes());
    seed_bytes[24..].copy_from_slice(b"cpsample");
    let mut rng = ChaCha8Rng::from_seed(seed_bytes);
    rng.set_stream(stream);
    rng
}

/// Variable order of sample `k`, drawn from its own stream.
fn order_for(n: usize, policy: OrderPolicy, seed: u64, k: u64, attempt: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if policy == OrderPolicy::Random {
        order.shuffle(&mut sample_rng(seed, k, attempt, 0));
    }
    order
}

/// Samples plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub plans: Vec<InvestmentPlan>,
    /// Draws whose tightened interval was empty and got clamped.
    pub empty_intervals: usize,
    /// Samples discarded because they failed the feasibility check.
    pub rejected: usize,
    /// Whether the nonnegativity preconditions held.
    pub guaranteed: bool,
}

/// Retries per sample when the polytope violates the nonnegativity
/// preconditions.
pub const MAX_RETRIES: u64 = 200;

/// Draws `k` plans. The output is a pure function of
/// `(polytope, seed, order)`; the executor only changes how fast.
pub fn sample_plans(
    k: usize,
    polytope: &FirstStagePolytope,
    seed: u64,
    order: OrderPolicy,
    exec: &Executor,
) -> Result<SampleSet> {
    polytope.validate()?;
    let s = Structure::new(polytope);
    let guaranteed = polytope.is_nonnegative();
    let n = polytope.num_vars();
    let outcomes = exec.try_map(k, |idx| -> Result<(Vec<f64>, DrawStats, usize)> {
        let mut empty = 0;
        for attempt in 0..MAX_RETRIES {
            let ord = order_for(n, order, seed, idx as u64, attempt);
            let mut rng = sample_rng(seed, idx as u64, attempt, 1);
            let (x, stats) = draw_one(polytope, &s, &ord, &mut rng, &mut |_| {})?;
            empty += stats.empty_intervals;
            if guaranteed || polytope.contains(&x) {
                return Ok((x, DrawStats { empty_intervals: empty }, attempt as usize));
            }
        }
        Err(Error::InvalidInstance(format!(
            "sample {idx}: no feasible draw after {MAX_RETRIES} attempts"
        )))
    })?;
    let mut set = SampleSet { plans: Vec::with_capacity(k), empty_intervals: 0, rejected: 0, guaranteed };
    for (x, stats, rejected) in outcomes {
        set.plans.push(InvestmentPlan::new(x));
        set.empty_intervals += stats.empty_intervals;
        set.rejected += rejected;
    }
    Ok(set)
}

/// Draws sample `k` and reports the sampler state after every update.
pub fn trace_sample(
    polytope: &FirstStagePolytope,
    seed: u64,
    k: u64,
    order: OrderPolicy,
    observe: &mut dyn FnMut(&SamplerState),
) -> Result<InvestmentPlan> {
    let s = Structure::new(polytope);
    let ord = order_for(polytope.num_vars(), order, seed, k, 0);
    let mut rng = sample_rng(seed, k, 0, 1);
    draw_one(polytope, &s, &ord, &mut rng, observe).map(|(x, _)| InvestmentPlan::new(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex2() -> FirstStagePolytope {
        FirstStagePolytope {
            a: vec![vec![1.0, 1.0]],
            b: vec![1.0],
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        }
    }

    #[test]
    fn implied_bound_hand_values() {
        let p = simplex2();
        let mut st = SamplerState::new(&p);
        // x1 chosen first, x2 still free at its lower end 0.
        st.remaining[0] = false;
        assert_eq!(propagate_bound(&p, 0, 0, &st).unwrap(), 1.0);
        // x1 fixed at 0.6: b' = 0.4 and nothing else is free.
        st.rhs[0] = 0.4;
        st.remaining[1] = false;
        assert!((propagate_bound(&p, 0, 1, &st).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn single_variable_row() {
        let p = FirstStagePolytope { a: vec![vec![2.0]], b: vec![6.0], lower: vec![0.0], upper: vec![10.0] };
        let st = SamplerState::new(&p);
        assert_eq!(propagate_bound(&p, 0, 0, &st).unwrap(), 3.0);
    }

    #[test]
    fn zero_coefficient_rejected() {
        let p = FirstStagePolytope { a: vec![vec![1.0, 0.0]], b: vec![1.0], lower: vec![0.0; 2], upper: vec![1.0; 2] };
        assert!(propagate_bound(&p, 0, 1, &SamplerState::new(&p)).is_err());
    }

    #[test]
    fn second_upper_bound_follows_first_draw() {
        let p = simplex2();
        let mut seen = Vec::new();
        let plan = trace_sample(&p, 3, 0, OrderPolicy::Fixed, &mut |st| seen.push(st.clone())).unwrap();
        // After drawing x1 and updating the row: u'_2 = 1 - x1.
        let after = &seen[1];
        assert!((after.upper[1] - (1.0 - plan.x[0])).abs() < 1e-15);
        assert!(plan.x[0] + plan.x[1] <= 1.0 + 1e-15);
    }

    #[test]
    fn box_only_is_uniform_per_coordinate() {
        let p = FirstStagePolytope { a: vec![], b: vec![], lower: vec![0.0, 0.0, 0.0], upper: vec![1.0, 4.0, 10.0] };
        let k = 10_000;
        let set = sample_plans(k, &p, 11, OrderPolicy::Random, &Executor::sequential()).unwrap();
        for j in 0..3 {
            let vals: Vec<f64> = set.plans.iter().map(|pl| pl.x[j]).collect();
            let mean = vals.iter().sum::<f64>() / k as f64;
            let width = p.upper[j] - p.lower[j];
            let se = width / 12f64.sqrt() / (k as f64).sqrt();
            assert!((mean - width / 2.0).abs() <= 3.0 * se, "coord {j}: {mean}");
        }
    }

    #[test]
    fn deterministic_across_executors() {
        let p = crate::model::default_instance().polytope().clone();
        let a = sample_plans(50, &p, 5, OrderPolicy::Random, &Executor::sequential()).unwrap();
        let b = sample_plans(50, &p, 5, OrderPolicy::Random, &Executor::with_threads(4)).unwrap();
        assert_eq!(a, b);
        let c = sample_plans(50, &p, 6, OrderPolicy::Random, &Executor::sequential()).unwrap();
        assert_ne!(a.plans, c.plans);
    }

    #[test]
    fn negative_coefficients_fall_back_to_rejection() {
        // x1 - x2 <= 0 with x in [0,1]^2.
        let p = FirstStagePolytope {
            a: vec![vec![1.0, -1.0]],
            b: vec![0.0],
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        assert!(!p.is_nonnegative());
        let set = sample_plans(200, &p, 1, OrderPolicy::Random, &Executor::sequential()).unwrap();
        assert!(!set.guaranteed);
        assert!(set.plans.iter().all(|pl| p.contains(&pl.x)));
    }

    #[test]
    fn infeasible_polytope_counts_empty_intervals() {
        // x1 >= 1 via -x1 <= -1, but x1 <= 0.5.
        let p = FirstStagePolytope { a: vec![vec![-1.0]], b: vec![-1.0], lower: vec![0.0], upper: vec![0.5] };
        let err = sample_plans(1, &p, 1, OrderPolicy::Fixed, &Executor::sequential());
        assert!(err.is_err());
        let mut empty = 0;
        let plan = trace_sample(&p, 1, 0, OrderPolicy::Fixed, &mut |st| {
            if st.lower[0] > st.upper[0] {
                empty += 1;
            }
        })
        .unwrap();
        assert_eq!(plan.x[0], 0.5);
        assert!(empty > 0);
    }
}
