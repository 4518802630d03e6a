//! Dirichlet-process location mixtures of multivariate normals.
//!
//! The crate covers the whole chain from the model to its large-sample
//! behaviour:
//!
//! * [`density`]: discrete mixing measures and isotropic Gaussian location
//!   mixtures (evaluation, sampling, a plain-text record format);
//! * [`prior`]: stick-breaking draws from `DP(α) × Ga(a, b)` and exact
//!   stick-tail probabilities;
//! * [`metrics`]: L1, Hellinger, Kullback-Leibler and its second moment by
//!   tensor-grid or Monte Carlo quadrature;
//! * [`sieve`]: constructive ε-nets of the stick-breaking sieve, projection
//!   certificates, prior complement mass and rate schedules;
//! * [`approx`]: Gaussian smoothing, moment-matched discretization, grid
//!   snapping, partition perturbation bounds and Dirichlet small balls;
//! * [`inference`]: a truncated blocked Gibbs sampler for the posterior;
//! * [`experiments`]: contraction-rate runs and their CSV/SVG reports.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod config;
pub mod density;
mod error;
pub mod experiments;
pub mod inference;
pub mod metrics;
pub mod numeric;
pub mod orthopoly;
pub mod prior;
pub mod rng;
pub mod sieve;

pub use error::{Error, Result};
