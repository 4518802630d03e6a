//! TOML experiment configuration.
//!
//! ```toml
//! seed = 1
//! n_grid = [100, 316, 1000, 3162]
//! replications = 8
//!
//! [prior]
//! alpha_mass = 1.0
//! gamma_shape = 2.0
//!
//! [rates]
//! base_iterations = 2000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::inference::FitConfig;
use crate::prior::PriorConfig;
use crate::{Error, Result};

/// MCMC budget of the rate experiment: `base + per_observation·n` sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateBudget {
    pub base_iterations: usize,
    pub per_observation: usize,
    pub burn_in_fraction: f64,
    /// Draws kept per fit, spread evenly over the post-burn-in phase.
    pub retained: usize,
    /// Grid points per axis for the Hellinger quadrature.
    pub quadrature_points: usize,
}

impl Default for RateBudget {
    fn default() -> Self {
        RateBudget {
            base_iterations: 2000,
            per_observation: 2,
            burn_in_fraction: 0.5,
            retained: 100,
            quadrature_points: 2048,
        }
    }
}

impl RateBudget {
    /// `(iterations, burn_in, thin)` for sample size `n`.
    pub fn schedule(&self, n: usize) -> (usize, usize, usize) {
        let iterations = self.base_iterations + self.per_observation * n;
        let burn_in = (iterations as f64 * self.burn_in_fraction).round() as usize;
        let thin = ((iterations - burn_in) / self.retained.max(1)).max(1);
        (iterations, burn_in, thin)
    }
}

/// Exponent `b` and the two σ windows used by the thickness audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxConfig {
    /// Ball diameters are `σ ε^{2b}`.
    pub b: f64,
    /// Ordinary-smooth window: `σ² ∈ ε̃ log(1/ε̃)^{-2}·(lo, hi)`.
    pub variance_window: [f64; 2],
    /// Super-smooth window: `σ ∈ σ₀(1 − w·ε̃ log(1/ε̃)^{-2}, 1)`.
    pub relative_window: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            b: 1.5,
            variance_window: [0.5, 1.0],
            relative_window: 1.0,
        }
    }
}

impl ApproxConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.variance_window;
        if !(self.b > 1.0) {
            return Err(Error::usage("b must exceed 1"));
        }
        if !(lo > 0.0 && lo < hi) || !(self.relative_window > 0.0) {
            return Err(Error::usage("σ windows must be nonempty and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub out_dir: PathBuf,
    /// Write wall-clock runtimes instead of `NA`; breaks byte-identical output.
    pub record_runtime: bool,
    pub prior: PriorConfig,
    pub fit: FitConfig,
    pub rates: RateBudget,
    pub approx: ApproxConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            n_grid: vec![100, 316, 1000, 3162],
            replications: 8,
            out_dir: PathBuf::from("out"),
            record_runtime: false,
            prior: PriorConfig::default(),
            fit: FitConfig::default(),
            rates: RateBudget::default(),
            approx: ApproxConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) || self.n_grid.first() == Some(&0) {
            return Err(Error::usage("n grid must be positive and strictly increasing"));
        }
        if self.replications == 0 {
            return Err(Error::usage("need at least one replication"));
        }
        let r = &self.rates;
        if !(r.burn_in_fraction >= 0.0 && r.burn_in_fraction < 1.0) || r.quadrature_points < 2 {
            return Err(Error::usage("burn-in fraction must lie in [0, 1) and quadrature needs 2 points"));
        }
        self.prior.build()?;
        self.fit.validate()?;
        self.approx.validate()
    }

    /// Slope fitting needs at least four sample sizes.
    pub fn validate_for_rates(&self) -> Result<()> {
        self.validate()?;
        if self.n_grid.len() < 4 {
            return Err(Error::usage("rate experiments need an n grid of length at least 4"));
        }
        Ok(())
    }
}
