//! Surrogate-based two-stage stochastic capacity expansion planning.
//!
//! The pipeline samples feasible investment plans by constraint propagation
//! ([`sampling`]), labels each plan with an adaptively sized sample-average
//! estimate of its expected production cost ([`labeling`]), fits linear and
//! ReLU-network surrogates of that cost ([`surrogate`]), and embeds the
//! surrogate into the planning problem as an LP or MILP ([`embedding`]).
//! Extensive-form and progressive-hedging baselines ([`baselines`]) and
//! out-of-sample scoring ([`evaluate`]) close the loop; [`pipeline`] wires the
//! stages together.

pub mod baselines;
pub mod embedding;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod labeling;
pub mod model;
pub mod optimize;
pub mod parallel;
pub mod pipeline;
pub mod sampling;
pub mod scenarios;
pub mod surrogate;

pub use error::{Error, Result};
pub use parallel::Executor;
