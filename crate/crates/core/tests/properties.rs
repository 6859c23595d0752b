mod common;

use cep_core::embedding::{embed_mlp, solve_plan};
use cep_core::evaluate::optimality_gap;
use cep_core::io::{plans_from_csv, plans_to_csv};
use cep_core::labeling::{required_scenarios, Moments};
use cep_core::model::{default_instance, FirstStagePolytope};
use cep_core::optimize::{solve_lp, LinearProgram, Sense, SolveStatus};
use cep_core::sampling::{sample_plans, OrderPolicy};
use cep_core::surrogate::{MlpSurrogate, Scaler};
use cep_core::Executor;
use common::{rel_diff, tableau_solve, Outcome};
use proptest::prelude::*;

fn row() -> impl Strategy<Value = (Vec<f64>, u8, f64)> {
    (prop::collection::vec(-5.0..5.0f64, 4), 0u8..6, -4.0..12.0f64)
}

fn lp_strategy() -> impl Strategy<Value = LinearProgram> {
    (
        prop::collection::vec(-5.0..5.0f64, 4),
        prop::collection::vec((-3.0..0.0f64, 0.5..8.0f64, any::<bool>()), 4),
        prop::collection::vec(row(), 1..6),
    )
        .prop_map(|(cost, bounds, rows)| {
            let mut lp = LinearProgram::new();
            for (c, (lo, width, finite)) in cost.into_iter().zip(bounds) {
                lp.add_var(c, lo, if finite { lo + width } else { f64::INFINITY });
            }
            for (coef, s, rhs) in rows {
                let sense = match s {
                    0 => Sense::Eq,
                    1 | 2 => Sense::Ge,
                    _ => Sense::Le,
                };
                lp.add_row(coef.into_iter().enumerate().collect(), sense, rhs);
            }
            lp
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_agrees_with_tableau(lp in lp_strategy()) {
        let ours = solve_lp(&lp).unwrap();
        match tableau_solve(&lp) {
            Outcome::Optimal(v) => {
                prop_assert_eq!(ours.status, SolveStatus::Optimal);
                prop_assert!(rel_diff(ours.objective, v) <= 1e-6, "{} vs {}", ours.objective, v);
                prop_assert!(lp.max_violation(&ours.x) <= 1e-6);
            }
            Outcome::Infeasible => prop_assert_eq!(ours.status, SolveStatus::Infeasible),
            Outcome::Unbounded => prop_assert_eq!(ours.status, SolveStatus::Unbounded),
        }
    }

    #[test]
    fn samples_are_feasible_and_executor_independent(seed in any::<u64>(), fixed in any::<bool>()) {
        let inst = default_instance();
        let order = if fixed { OrderPolicy::Fixed } else { OrderPolicy::Random };
        let a = sample_plans(6, inst.polytope(), seed, order, &Executor::sequential()).unwrap();
        let b = sample_plans(6, inst.polytope(), seed, order, &Executor::with_threads(3)).unwrap();
        for p in &a.plans {
            prop_assert!(inst.polytope().max_violation(&p.x) <= 0.0);
        }
        prop_assert_eq!(a.plans, b.plans);
    }

    #[test]
    fn merged_moments_match_two_pass(
        q in prop::collection::vec(1e3..1e9f64, 2..80),
        cut in 0usize..80,
    ) {
        let cut = cut.min(q.len());
        let mut m = Moments::from_costs(&q[..cut]);
        m.merge(&Moments::from_costs(&q[cut..]));
        let n = q.len() as f64;
        let mean = q.iter().sum::<f64>() / n;
        let var = q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert_eq!(m.count(), q.len());
        prop_assert!((m.mean() - mean).abs() <= 1e-12 * mean);
        prop_assert!((m.variance() - var).abs() <= 1e-9 * var.max(1e-300) + 1e-6);
    }

    #[test]
    fn required_count_is_monotone(
        cv in 0.0..1.0f64,
        extra in 0.0..0.5f64,
        s in 2usize..50,
        tol in 0.02..0.5f64,
    ) {
        let lo = required_scenarios(1.0, cv * cv, tol, 0.05, s).unwrap();
        let hi = required_scenarios(1.0, (cv + extra).powi(2), tol, 0.05, s).unwrap();
        prop_assert!(lo >= s);
        prop_assert!(hi >= lo);
    }

    #[test]
    fn gap_sign_follows_cost(a in 1.0..1e9f64, b in 1.0..1e9f64) {
        let g = optimality_gap(a, b).unwrap();
        prop_assert_eq!(g > 0.0, a > b);
        prop_assert!((g / 100.0 * b + b - a).abs() <= 1e-9 * a.max(b));
    }

    #[test]
    fn scaler_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 3), 2..20)) {
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let s = Scaler::fit(&refs);
        for r in &rows {
            let back = s.invert(&s.apply(r));
            for (x, y) in r.iter().zip(&back) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn plan_csv_round_trips(seed in any::<u64>()) {
        let inst = default_instance();
        let plans = sample_plans(3, inst.polytope(), seed, OrderPolicy::Random, &Executor::sequential()).unwrap().plans;
        let back = plans_from_csv(&inst, &plans_to_csv(&inst, &plans).unwrap()).unwrap();
        prop_assert_eq!(back, plans);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// With the plan pinned, the MILP minimum of `mu` is the network output.
    #[test]
    fn fixed_plan_milp_reproduces_prediction(
        seed in any::<u64>(),
        x in prop::collection::vec(0.0..10.0f64, 3),
        w1 in 2usize..6,
        w2 in 1usize..4,
    ) {
        let poly = FirstStagePolytope { a: vec![vec![1.0, 1.0, 1.0]], b: vec![20.0], lower: vec![0.0; 3], upper: vec![10.0; 3] };
        let scaler = Scaler { mean: vec![5.0; 3], scale: vec![3.0; 3] };
        let net = MlpSurrogate::init(scaler, &[w1, w2], seed);
        let x: Vec<f64> = if x.iter().sum::<f64>() > 20.0 { x.iter().map(|v| v / 2.0).collect() } else { x };
        let mut p = embed_mlp(&net, &poly, &[0.5, -0.2, 0.1]).unwrap();
        p.fix_plan(&x).unwrap();
        let sol = solve_plan(&p, &poly, 1e-12, None).unwrap();
        let want = net.predict(&x).unwrap();
        prop_assert!(rel_diff(sol.mu, want) <= 1e-6, "{} vs {}", sol.mu, want);
    }
}
