use serde::{Deserialize, Serialize};

use crate::model::{CandidateKind, CandidateSpec, InstanceSpec, NodeSpec, RowSpec, Term, INSTANCE_FORMAT_VERSION};
use crate::scenarios::{RenewableProfile, ScenarioParams};

/// Knobs of the parametric instance family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub nodes: usize,
    pub periods: Vec<i32>,
    /// Connect consecutive nodes with a line candidate.
    pub lines: bool,
    /// Mean demand of the first node in the first period (MW).
    pub base_demand: f64,
    /// Demand growth per period (fraction).
    pub demand_growth: f64,
    pub discount_rate: f64,
    pub shed_penalty: f64,
    /// Total new MW allowed per period across all candidates.
    pub period_build_cap: f64,
    /// Diurnal swing of renewable capacity factors.
    pub renewable_diurnal_amplitude: f64,
    /// Fraction of the initial thermal fleet retiring per period.
    pub thermal_retirement: f64,
    pub scenario: ScenarioParams,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            nodes: 3,
            periods: vec![2020, 2025, 2030],
            lines: true,
            base_demand: 100.0,
            demand_growth: 0.15,
            discount_rate: 0.05,
            shed_penalty: 500.0,
            period_build_cap: 400.0,
            renewable_diurnal_amplitude: 0.2,
            thermal_retirement: 0.15,
            scenario: ScenarioParams {
                ar_coef: 0.3,
                demand_log_sigma: 0.08,
                demand_diurnal_amplitude: 0.1,
                ..ScenarioParams::default()
            },
        }
    }
}

/// Builds an instance with a thermal, a renewable and a storage candidate per
/// node and optional lines between consecutive nodes. All coupling rows have
/// nonnegative coefficients and right-hand sides.
pub fn synthetic_instance(cfg: &SyntheticConfig) -> InstanceSpec {
    let t = cfg.periods.len();
    let node_ids: Vec<String> = (0..cfg.nodes).map(|n| format!("z{n}")).collect();
    let nodes: Vec<NodeSpec> = node_ids
        .iter()
        .enumerate()
        .map(|(n, id)| {
            let scale = [1.0, 0.8, 1.2][n % 3] * (1.0 + 0.1 * (n / 3) as f64);
            let demand = (0..t)
                .map(|p| cfg.base_demand * scale * (1.0 + cfg.demand_growth).powi(p as i32))
                .collect();
            NodeSpec { id: id.clone(), demand }
        })
        .collect();

    let per_period = |v: f64| vec![v; t];
    let retiring = |start: f64| -> Vec<f64> {
        (0..t).map(|p| start * (1.0 - cfg.thermal_retirement * p as f64).max(0.0)).collect()
    };
    let mut candidates = Vec::new();
    for (n, id) in node_ids.iter().enumerate() {
        let d0 = nodes[n].demand[0];
        candidates.push(CandidateSpec {
            id: format!("thermal_{id}"),
            inv_cost: per_period(450_000.0),
            lifetime: 6,
            preexisting: retiring(1.1 * d0),
            max_build: per_period(30.0),
            kind: CandidateKind::Thermal {
                node: id.clone(),
                marginal_cost: 55.0 + 10.0 * n as f64,
                ramp_rate: 0.35,
            },
        });
        candidates.push(CandidateSpec {
            id: format!("renewable_{id}"),
            inv_cost: per_period(300_000.0),
            lifetime: 5,
            preexisting: per_period(0.2 * d0),
            max_build: per_period(80.0),
            kind: CandidateKind::Renewable {
                node: id.clone(),
                marginal_cost: 1.0,
                profile: RenewableProfile {
                    mean_cf: [0.3, 0.35, 0.25][n % 3],
                    diurnal_amplitude: cfg.renewable_diurnal_amplitude,
                    peak_hour: 13.0,
                    seasonal_amplitude: 0.0,
                },
            },
        });
        candidates.push(CandidateSpec {
            id: format!("storage_{id}"),
            inv_cost: per_period(200_000.0),
            lifetime: 3,
            preexisting: per_period(0.0),
            max_build: per_period(15.0),
            kind: CandidateKind::Storage { node: id.clone(), efficiency: 0.85, energy_ratio: 4.0 },
        });
    }
    if cfg.lines {
        for n in 0..cfg.nodes.saturating_sub(1) {
            candidates.push(CandidateSpec {
                id: format!("line_{}_{}", node_ids[n], node_ids[n + 1]),
                inv_cost: per_period(120_000.0),
                lifetime: 8,
                preexisting: per_period(20.0),
                max_build: per_period(30.0),
                kind: CandidateKind::Line {
                    from: node_ids[n].clone(),
                    to: node_ids[n + 1].clone(),
                    capacity_factor: 1.0,
                },
            });
        }
    }

    let mut rows = Vec::new();
    for &year in &cfg.periods {
        rows.push(RowSpec {
            name: format!("build_cap_{year}"),
            rhs: cfg.period_build_cap,
            terms: candidates.iter().map(|c| Term { candidate: c.id.clone(), period: year, coef: 1.0 }).collect(),
        });
    }
    for (prefix, cap) in [("thermal_", 0.6), ("renewable_", 1.0)] {
        rows.push(RowSpec {
            name: format!("{prefix}total"),
            rhs: cap * cfg.period_build_cap * t as f64 / 2.0,
            terms: candidates
                .iter()
                .filter(|c| c.id.starts_with(prefix))
                .flat_map(|c| cfg.periods.iter().map(|&year| Term { candidate: c.id.clone(), period: year, coef: 1.0 }))
                .collect(),
        });
    }

    InstanceSpec {
        format_version: INSTANCE_FORMAT_VERSION,
        name: format!("synthetic-{}n-{}p", cfg.nodes, t),
        periods: cfg.periods.clone(),
        discount_rate: cfg.discount_rate,
        shed_penalty: cfg.shed_penalty,
        nodes,
        candidates,
        rows,
        scenario: cfg.scenario.clone(),
    }
}
