//! Seeded synthetic scenario generator.
//!
//! A scenario is a joint draw of hourly nodal demand and per-generator
//! availability over a requested number of chronological hours. Every draw is
//! a pure function of `(params, stream key, horizon)`: randomness comes from a
//! ChaCha stream seeded by hashing the key, with one sub-stream per hour, so
//! the result never depends on which thread asked for it or in which order.
//!
//! Two scenarios with the same index but different horizons are independent
//! draws; a longer horizon is not an extension of a shorter one.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOURS_PER_YEAR: f64 = 8760.0;

/// Stochastic process parameters shared by all nodes and generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub seed: u64,
    /// AR(1) coefficient of the demand and renewable noise processes.
    pub ar_coef: f64,
    /// Stationary standard deviation of the log-demand noise.
    pub demand_log_sigma: f64,
    /// Relative amplitude of the daily demand cycle.
    pub demand_diurnal_amplitude: f64,
    pub demand_peak_hour: f64,
    /// Relative amplitude of the annual demand cycle.
    pub demand_seasonal_amplitude: f64,
    /// Stationary standard deviation of the additive renewable noise.
    pub renewable_noise_sigma: f64,
    /// Thermal availability outside outages.
    pub thermal_availability: f64,
    /// Per-hour probability of a thermal outage dip.
    pub outage_probability: f64,
    /// Thermal availability during an outage dip.
    pub outage_availability: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            seed: 20240601,
            ar_coef: 0.9,
            demand_log_sigma: 0.1,
            demand_diurnal_amplitude: 0.15,
            demand_peak_hour: 18.0,
            demand_seasonal_amplitude: 0.0,
            renewable_noise_sigma: 0.1,
            thermal_availability: 0.97,
            outage_probability: 0.01,
            outage_availability: 0.5,
        }
    }
}

impl ScenarioParams {
    /// Expected thermal availability in any hour.
    pub fn thermal_mean_availability(&self) -> f64 {
        (1.0 - self.outage_probability) * self.thermal_availability
            + self.outage_probability * self.outage_availability
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScenario(m.to_string()));
        if !(0.0..1.0).contains(&self.ar_coef) {
            return bad("ar_coef must lie in [0, 1)");
        }
        if self.demand_log_sigma < 0.0 || self.renewable_noise_sigma < 0.0 {
            return bad("noise scales must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.demand_diurnal_amplitude)
            || !(0.0..=1.0).contains(&self.demand_seasonal_amplitude)
        {
            return bad("demand amplitudes must lie in [0, 1]");
        }
        for p in [self.thermal_availability, self.outage_probability, self.outage_availability] {
            if !(0.0..=1.0).contains(&p) {
                return bad("thermal availability parameters must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Daily and annual capacity-factor shape of one renewable candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewableProfile {
    pub mean_cf: f64,
    pub diurnal_amplitude: f64,
    pub peak_hour: f64,
    pub seasonal_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorProfile {
    Thermal,
    Renewable(RenewableProfile),
}

/// Everything the generator needs, extracted from a planning instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub params: ScenarioParams,
    /// Mean demand (MW) indexed `[period][node]`.
    pub mean_demand: Vec<Vec<f64>>,
    /// One entry per generator, in instance generator order.
    pub generators: Vec<GeneratorProfile>,
}

/// Which experiment a scenario belongs to; streams in different namespaces
/// never coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Namespace {
    Training,
    Validation,
    Baseline,
}

impl Namespace {
    pub fn tag(self) -> u64 {
        match self {
            Namespace::Training => 0x7472_6169_6e00_0001,
            Namespace::Validation => 0x7661_6c69_6400_0002,
            Namespace::Baseline => 0x6261_7365_6c00_0003,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub namespace: Namespace,
    pub sample_id: u64,
    /// Period index (0-based).
    pub period: u32,
    /// Scenario index (1-based, as in the labeling loop).
    pub scenario: u32,
}

impl StreamKey {
    pub fn new(namespace: Namespace, sample_id: u64, period: usize, scenario: usize) -> Self {
        StreamKey { namespace, sample_id, period: period as u32, scenario: scenario as u32 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub key: StreamKey,
    pub base_seed: u64,
    pub horizon: usize,
    /// Hour of the year at which the horizon starts.
    pub start_hour: usize,
    /// MW indexed `[node][hour]`.
    pub demand: Vec<Vec<f64>>,
    /// Capacity factor in [0, 1] indexed `[generator][hour]`.
    pub availability: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn num_nodes(&self) -> usize {
        self.demand.len()
    }

    /// A scenario with constant demand and availability, mostly for tests.
    pub fn flat(demand: Vec<f64>, availability: Vec<f64>, horizon: usize) -> Self {
        Scenario {
            key: StreamKey::new(Namespace::Training, 0, 0, 1),
            base_seed: 0,
            horizon,
            start_hour: 0,
            demand: demand.into_iter().map(|d| vec![d; horizon]).collect(),
            availability: availability.into_iter().map(|a| vec![a; horizon]).collect(),
        }
    }

    /// Multiplies every demand value by `factor`.
    pub fn scale_demand(&mut self, factor: f64) {
        for series in &mut self.demand {
            for d in series {
                *d *= factor;
            }
        }
    }

    /// Columnar dump: `hour,kind,id,value` with one line per series entry.
    pub fn to_columns(&self, node_ids: &[String], generator_ids: &[String]) -> String {
        let mut out = String::from("hour,kind,id,value\n");
        for h in 0..self.horizon {
            for (n, series) in self.demand.iter().enumerate() {
                let id = node_ids.get(n).map(String::as_str).unwrap_or("?");
                let _ = writeln!(out, "{h},demand,{id},{}", series[h]);
            }
            for (g, series) in self.availability.iter().enumerate() {
                let id = generator_ids.get(g).map(String::as_str).unwrap_or("?");
                let _ = writeln!(out, "{h},availability,{id},{}", series[h]);
            }
        }
        out
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> [u8; 32] {
    let mut state = 0x5EED_0F5C_E4A2_1057u64;
    for &p in parts {
        state = splitmix(state ^ splitmix(p));
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    seed
}

const SCENARIO_STREAM: u64 = u64::MAX;

/// Draws one scenario. Deterministic in `(gen, key, horizon)`.
pub fn sample(gen: &GeneratorParams, key: StreamKey, horizon: usize) -> Result<Scenario> {
    if horizon == 0 {
        return Err(Error::InvalidScenario("horizon must be at least one hour".into()));
    }
    let period = key.period as usize;
    let Some(mean_demand) = gen.mean_demand.get(period) else {
        return Err(Error::InvalidScenario(format!("no demand data for period index {period}")));
    };
    let p = &gen.params;
    let seed = derive_seed(&[
        p.seed,
        key.namespace.tag(),
        key.sample_id,
        key.period as u64,
        key.scenario as u64,
        horizon as u64,
    ]);
    let root = ChaCha8Rng::from_seed(seed);

    let mut rng = root.clone();
    rng.set_stream(SCENARIO_STREAM);
    let start_hour = rng.random_range(0..HOURS_PER_YEAR as usize);
    let n_nodes = mean_demand.len();
    let n_gens = gen.generators.len();
    let normal = |r: &mut ChaCha8Rng| -> f64 { r.sample(StandardNormal) };

    let phi = p.ar_coef;
    let innov = (1.0 - phi * phi).sqrt();
    let mut demand_noise: Vec<f64> = (0..n_nodes).map(|_| normal(&mut rng)).collect();
    let mut renew_noise: Vec<f64> = (0..n_gens).map(|_| normal(&mut rng)).collect();

    let mut demand = vec![Vec::with_capacity(horizon); n_nodes];
    let mut availability = vec![Vec::with_capacity(horizon); n_gens];
    let ds = p.demand_log_sigma;
    for h in 0..horizon {
        let mut hr = root.clone();
        hr.set_stream(h as u64);
        if h > 0 {
            for e in demand_noise.iter_mut() {
                *e = phi * *e + innov * normal(&mut hr);
            }
            for e in renew_noise.iter_mut() {
                *e = phi * *e + innov * normal(&mut hr);
            }
        }
        let tau = (start_hour + h) as f64;
        let hour_of_day = tau % 24.0;
        let season = (2.0 * PI * tau / HOURS_PER_YEAR).cos();
        let diurnal = 1.0
            + p.demand_diurnal_amplitude
                * (2.0 * PI * (hour_of_day - p.demand_peak_hour) / 24.0).cos();
        let seasonal = 1.0 + p.demand_seasonal_amplitude * season;
        for n in 0..n_nodes {
            let mult = if ds > 0.0 { (ds * demand_noise[n] - 0.5 * ds * ds).exp() } else { 1.0 };
            demand[n].push((mean_demand[n] * diurnal * seasonal * mult).max(0.0));
        }
        for (g, profile) in gen.generators.iter().enumerate() {
            let rho = match profile {
                GeneratorProfile::Thermal => {
                    let u: f64 = hr.random();
                    if u < p.outage_probability {
                        p.outage_availability
                    } else {
                        p.thermal_availability
                    }
                }
                GeneratorProfile::Renewable(rp) => {
                    let shape = rp.mean_cf * (1.0 + rp.seasonal_amplitude * season)
                        + rp.diurnal_amplitude
                            * (2.0 * PI * (hour_of_day - rp.peak_hour) / 24.0).cos();
                    shape + p.renewable_noise_sigma * renew_noise[g]
                }
            };
            availability[g].push(rho.clamp(0.0, 1.0));
        }
    }
    Ok(Scenario { key, base_seed: p.seed, horizon, start_hour, demand, availability })
}
