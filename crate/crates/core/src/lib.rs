//! Conformal Bayesian prediction sets from posterior parameter draws.
//!
//! Given draws `θ^(1:T) ~ π(θ | Z_1..Z_n)` from any supported model family,
//! the [`conformal`] module computes full conformal prediction sets with
//! finite-sample coverage by add-one-in importance sampling: no refitting
//! per grid point, just reweighted likelihood sums. The [`hierarchy`] module
//! extends this to within-group (Mondrian) prediction for grouped data under
//! partial exchangeability, [`baselines`] provides the Bayes credible and
//! split-conformal reference constructions, and [`bench`] is a repeated
//! train/test coverage harness over simulated scenarios.
//!
//! Posterior draws can be ingested from CSV ([`posterior::ingest_draws`]) or
//! produced by the built-in adaptive random-walk Metropolis sampler
//! ([`metropolis::sample_metropolis`]).

pub mod baselines;
pub mod bench;
pub mod conformal;
pub mod data;
pub mod error;
pub mod hierarchy;
pub mod math;
pub mod metropolis;
pub mod model;
pub mod posterior;
pub mod report;

pub use error::{Error, Result};
