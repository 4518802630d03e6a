//! Blocked Gibbs sampler for the truncated stick-breaking mixture.
//!
//! The truncated model has sticks `V_1..V_{T−1} ~ Beta(1, |α|)`, `V_T = 1`,
//! atoms `Z_h ~ ᾱ = N(0, τ²I)`, `σ^{-d} ~ Ga(a, b)` and observations
//! `x_i | s_i = h ~ N(Z_h, σ²I)`. One sweep updates allocations, sticks,
//! atoms and then `log σ` by random-walk Metropolis.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::{DiscreteMeasure, MixtureDensity, Point};
use crate::metrics::{BoundingBox, DensityFunction};
use crate::numeric::{batch_means_se, LN_UNDERFLOW};
use crate::prior::{draw_stick, DPPrior};
use crate::rng::{stream, SimRng};
use crate::{Error, Result};

/// Truncation giving a mean prior deficit `(|α|/(1+|α|))^T` below 1e-3.
pub fn default_truncation(alpha_mass: f64) -> usize {
    let t = ((1e-3f64).ln() / (alpha_mass / (1.0 + alpha_mass)).ln()).ceil();
    if t.is_finite() {
        (t as usize).clamp(20, 500)
    } else {
        500
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Number of stick-breaking components; `None` picks [`default_truncation`].
    pub truncation: Option<usize>,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Initial random-walk step on `log σ`.
    pub sigma_step: f64,
    pub seed: u64,
    /// Hold σ at this value instead of sampling it.
    pub fixed_sigma: Option<f64>,
    /// Keep every observation on the first atom.
    pub single_cluster: bool,
    /// Adapt the σ step during burn-in.
    pub adapt: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            truncation: None,
            iterations: 2000,
            burn_in: 1000,
            thin: 5,
            sigma_step: 0.2,
            seed: 0,
            fixed_sigma: None,
            single_cluster: false,
            adapt: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.truncation, Some(t) if t < 2) {
            return Err(Error::usage("truncation must be at least 2"));
        }
        if self.iterations < self.burn_in {
            return Err(Error::usage("iterations must be at least burn-in"));
        }
        if self.thin == 0 {
            return Err(Error::usage("thin must be at least 1"));
        }
        if !(self.sigma_step > 0.0 && self.sigma_step.is_finite()) {
            return Err(Error::usage("σ step must be positive"));
        }
        if matches!(self.fixed_sigma, Some(s) if !(s > 0.0 && s.is_finite())) {
            return Err(Error::usage("fixed σ must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub allocations: Vec<usize>,
    pub sticks: Vec<f64>,
    /// Row-major atoms, `T × d`.
    pub atoms: Vec<f64>,
    pub sigma: f64,
    pub iteration: usize,
    pub log_joint: f64,
}

impl GibbsState {
    pub fn truncation(&self) -> usize {
        self.sticks.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        stick_weights(&self.sticks)
    }

    pub fn density(&self, dim: usize) -> Result<MixtureDensity> {
        MixtureDensity::new(
            DiscreteMeasure::from_flat(dim, self.atoms.clone(), self.weights())?,
            self.sigma,
        )
    }
}

fn stick_weights(sticks: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    sticks
        .iter()
        .map(|&v| {
            let w = v * rest;
            rest *= 1.0 - v;
            w
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct PosteriorSampleSet {
    pub draws: Vec<MixtureDensity>,
    pub sigma_trace: Vec<f64>,
    /// Metropolis acceptance over the burn-in and the retained phase.
    pub burn_in_acceptance: f64,
    pub acceptance: f64,
    pub final_step: f64,
    pub log_joint_trace: Vec<f64>,
    pub truncation: usize,
}

impl PosteriorSampleSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Concatenate two sample sets.
    pub fn concat(mut self, other: PosteriorSampleSet) -> Self {
        self.draws.extend(other.draws);
        self.sigma_trace.extend(other.sigma_trace);
        self.log_joint_trace.extend(other.log_joint_trace);
        self
    }
}

/// Sufficient statistics of the σ update: `n·d` and the residual sum of squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaStats {
    pub nd: f64,
    pub rss: f64,
}

/// Unnormalized log posterior of `u = log σ` given the allocations and atoms.
pub fn sigma_log_target(prior: &DPPrior, stats: SigmaStats, u: f64) -> f64 {
    prior.bandwidth.ln_density_log_sigma(u) - stats.nd * u - 0.5 * stats.rss * (-2.0 * u).exp()
}

/// Metropolis acceptance probability for a symmetric proposal.
pub fn metropolis_accept_prob(ln_current: f64, ln_proposed: f64) -> f64 {
    let r = ln_proposed - ln_current;
    if r >= 0.0 {
        1.0
    } else {
        r.exp()
    }
}

pub struct GibbsSampler<'a> {
    prior: &'a DPPrior,
    config: FitConfig,
    data: Vec<f64>,
    n: usize,
    dim: usize,
    state: GibbsState,
    rng: SimRng,
    step: f64,
    counts: Vec<usize>,
    sums: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(data: &[Point], prior: &'a DPPrior, config: FitConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::usage("data must be nonempty"));
        }
        let dim = prior.dim();
        if data.iter().any(|p| p.dim() != dim) {
            return Err(Error::usage(format!("every observation must have dimension {dim}")));
        }
        let flat: Vec<f64> = data.iter().flat_map(|p| p.coords().iter().copied()).collect();
        let t = if config.single_cluster {
            config.truncation.unwrap_or(2)
        } else {
            config.truncation.unwrap_or_else(|| default_truncation(prior.alpha_mass()))
        };
        let mut rng = stream(config.seed, 0);
        let mut sticks: Vec<f64> = (0..t - 1).map(|_| draw_stick(prior.alpha_mass(), &mut rng)).collect();
        sticks.push(1.0);
        let mut atoms = Vec::with_capacity(t * dim);
        for _ in 0..t {
            prior.base.sample_into(&mut rng, &mut atoms);
        }
        let sigma = config.fixed_sigma.unwrap_or_else(|| prior.bandwidth.sample(&mut rng));
        let n = data.len();
        let state = GibbsState {
            allocations: vec![0; n],
            sticks,
            atoms,
            sigma,
            iteration: 0,
            log_joint: f64::NAN,
        };
        let step = config.sigma_step;
        let mut s = GibbsSampler {
            prior,
            config,
            data: flat,
            n,
            dim,
            state,
            rng,
            step,
            counts: vec![0; t],
            sums: vec![0.0; t * dim],
            scratch: vec![0.0; t],
        };
        s.update_allocations();
        s.state.log_joint = s.log_joint();
        Ok(s)
    }

    pub fn state(&self) -> &GibbsState {
        &self.state
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Replace the state, e.g. for successive-conditional simulation.
    pub fn set_state(&mut self, state: GibbsState) {
        self.state = state;
        self.state.log_joint = self.log_joint();
    }

    /// Overwrite the observations, keeping their number and dimension.
    pub fn set_data(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.data.len());
        self.data.copy_from_slice(flat);
    }

    fn sq_dist(&self, i: usize, h: usize) -> f64 {
        let d = self.dim;
        self.data[i * d..(i + 1) * d]
            .iter()
            .zip(&self.state.atoms[h * d..(h + 1) * d])
            .map(|(x, z)| (x - z) * (x - z))
            .sum()
    }

    fn update_allocations(&mut self) {
        if self.config.single_cluster {
            self.state.allocations.iter_mut().for_each(|s| *s = 0);
            return;
        }
        let t = self.state.truncation();
        let ln_w: Vec<f64> = self.state.weights().iter().map(|w| w.ln()).collect();
        let inv = 1.0 / (2.0 * self.state.sigma * self.state.sigma);
        for i in 0..self.n {
            let mut max = f64::NEG_INFINITY;
            for h in 0..t {
                let v = ln_w[h] - self.sq_dist(i, h) * inv;
                self.scratch[h] = v;
                max = max.max(v);
            }
            let mut total = 0.0;
            for h in 0..t {
                let v = self.scratch[h] - max;
                let e = if v < LN_UNDERFLOW { 0.0 } else { v.exp() };
                total += e;
                self.scratch[h] = total;
            }
            let u = self.rng.random::<f64>() * total;
            let pick = self.scratch.iter().position(|&c| c > u).unwrap_or(t - 1);
            self.state.allocations[i] = pick;
        }
    }

    fn tally(&mut self) {
        let d = self.dim;
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        for (i, &s) in self.state.allocations.iter().enumerate() {
            self.counts[s] += 1;
            for k in 0..d {
                self.sums[s * d + k] += self.data[i * d + k];
            }
        }
    }

    fn update_sticks(&mut self) {
        let t = self.state.truncation();
        let alpha = self.prior.alpha_mass();
        let mut tail: usize = self.counts.iter().sum();
        for h in 0..t - 1 {
            tail -= self.counts[h];
            let b = Beta::new(1.0 + self.counts[h] as f64, alpha + tail as f64).expect("positive Beta parameters");
            // keep sticks inside (0, 1) so their log densities stay finite
            self.state.sticks[h] = b.sample(&mut self.rng).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        }
    }

    fn update_atoms(&mut self) {
        let d = self.dim;
        let tau2 = self.prior.base.tau().powi(2);
        let s2 = self.state.sigma * self.state.sigma;
        for h in 0..self.state.truncation() {
            // an empty cluster gets n_h = 0 and hence a fresh base-measure draw
            let v = 1.0 / (1.0 / tau2 + self.counts[h] as f64 / s2);
            let sd = v.sqrt();
            for k in 0..d {
                let m = v * self.sums[h * d + k] / s2;
                let e: f64 = StandardNormal.sample(&mut self.rng);
                self.state.atoms[h * d + k] = m + sd * e;
            }
        }
    }

    pub fn sigma_stats(&self) -> SigmaStats {
        SigmaStats {
            nd: (self.n * self.dim) as f64,
            rss: (0..self.n).map(|i| self.sq_dist(i, self.state.allocations[i])).sum(),
        }
    }

    /// One Metropolis step on `log σ`; returns whether it was accepted.
    fn update_sigma(&mut self) -> bool {
        if self.config.fixed_sigma.is_some() {
            return false;
        }
        let stats = self.sigma_stats();
        let u = self.state.sigma.ln();
        let e: f64 = StandardNormal.sample(&mut self.rng);
        let u_new = u + self.step * e;
        let p = metropolis_accept_prob(
            sigma_log_target(self.prior, stats, u),
            sigma_log_target(self.prior, stats, u_new),
        );
        let accept = self.rng.random::<f64>() < p;
        if accept {
            self.state.sigma = u_new.exp();
        }
        accept
    }

    /// One full sweep; returns whether the σ proposal was accepted.
    pub fn sweep(&mut self) -> Result<bool> {
        self.update_allocations();
        self.tally();
        if !self.config.single_cluster {
            self.update_sticks();
        }
        self.update_atoms();
        let accepted = self.update_sigma();
        self.state.iteration += 1;
        self.state.log_joint = self.log_joint();
        if !self.state.log_joint.is_finite() {
            return Err(Error::Numerical(format!(
                "log joint became {} at iteration {}; state: σ = {:e}, sticks = {:?}, atoms = {:?}",
                self.state.log_joint, self.state.iteration, self.state.sigma, self.state.sticks, self.state.atoms
            )));
        }
        Ok(accepted)
    }

    pub fn log_likelihood(&self) -> f64 {
        log_likelihood(&self.data, self.dim, &self.state)
    }

    /// Log joint density of data, allocations and parameters (up to constants).
    pub fn log_joint(&self) -> f64 {
        let st = &self.state;
        let alpha = self.prior.alpha_mass();
        let ln_w: Vec<f64> = st.weights().iter().map(|w| w.ln()).collect();
        let alloc: f64 = if self.config.single_cluster {
            0.0
        } else {
            st.allocations.iter().map(|&s| ln_w[s]).sum()
        };
        let sticks: f64 = st.sticks[..st.truncation() - 1]
            .iter()
            .map(|v| alpha.ln() + (alpha - 1.0) * (-v).ln_1p())
            .sum();
        let atoms: f64 = st
            .atoms
            .chunks_exact(self.dim)
            .map(|z| self.prior.base.ln_density(z))
            .sum();
        let sigma = if self.config.fixed_sigma.is_some() {
            0.0
        } else {
            self.prior.bandwidth.ln_density_log_sigma(st.sigma.ln())
        };
        self.log_likelihood() + alloc + sticks + atoms + sigma
    }

    pub fn run(&mut self) -> Result<PosteriorSampleSet> {
        let cfg = self.config.clone();
        let mut out = PosteriorSampleSet {
            truncation: self.state.truncation(),
            ..Default::default()
        };
        let (mut acc_burn, mut acc_keep) = (0usize, 0usize);
        let mut window = 0usize;
        const ADAPT_WINDOW: usize = 50;
        for it in 0..cfg.iterations {
            let accepted = self.sweep()?;
            out.log_joint_trace.push(self.state.log_joint);
            if it < cfg.burn_in {
                acc_burn += accepted as usize;
                window += accepted as usize;
                if cfg.adapt && cfg.fixed_sigma.is_none() && (it + 1) % ADAPT_WINDOW == 0 {
                    let rate = window as f64 / ADAPT_WINDOW as f64;
                    if rate < 0.2 {
                        self.step *= 0.7;
                    } else if rate > 0.5 {
                        self.step *= 1.4;
                    }
                    window = 0;
                }
                continue;
            }
            acc_keep += accepted as usize;
            if (it - cfg.burn_in).is_multiple_of(cfg.thin) {
                out.draws.push(self.state.density(self.dim)?);
                out.sigma_trace.push(self.state.sigma);
            }
        }
        out.burn_in_acceptance = acc_burn as f64 / cfg.burn_in.max(1) as f64;
        out.acceptance = acc_keep as f64 / (cfg.iterations - cfg.burn_in).max(1) as f64;
        out.final_step = self.step;
        Ok(out)
    }
}

/// `Σ_i log φ_σ(x_i − Z_{s_i})`.
pub fn log_likelihood(data: &[f64], dim: usize, state: &GibbsState) -> f64 {
    let s2 = state.sigma * state.sigma;
    let c = -0.5 * dim as f64 * (2.0 * std::f64::consts::PI * s2).ln();
    data.chunks_exact(dim)
        .zip(&state.allocations)
        .map(|(x, &h)| {
            let sq: f64 = x
                .iter()
                .zip(&state.atoms[h * dim..(h + 1) * dim])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            c - sq / (2.0 * s2)
        })
        .sum()
}

pub fn fit(data: &[Point], prior: &DPPrior, config: &FitConfig) -> Result<PosteriorSampleSet> {
    GibbsSampler::new(data, prior, config.clone())?.run()
}

/// Pointwise average of the retained mixture densities.
#[derive(Debug, Clone)]
pub struct PosteriorMean {
    draws: Vec<MixtureDensity>,
}

impl PosteriorMean {
    pub fn new(samples: &PosteriorSampleSet) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::usage("posterior predictive needs at least one retained draw"));
        }
        Ok(PosteriorMean {
            draws: samples.draws.clone(),
        })
    }
}

impl DensityFunction for PosteriorMean {
    fn dim(&self) -> usize {
        self.draws[0].dim()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        self.draws.iter().map(|m| m.pdf(x)).sum::<f64>() / self.draws.len() as f64
    }

    fn support_hint(&self) -> BoundingBox {
        self.draws
            .iter()
            .map(|m| m.support_hint())
            .reduce(|a, b| a.union(&b))
            .expect("nonempty")
    }
}

/// The posterior mean density tabulated on `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
}

pub fn posterior_predictive(samples: &PosteriorSampleSet, grid: &[Point]) -> Result<TabulatedDensity> {
    let mean = PosteriorMean::new(samples)?;
    Ok(TabulatedDensity {
        values: grid.iter().map(|p| mean.pdf(p)).collect(),
        points: grid.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub expected: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorReproductionReport {
    pub checks: Vec<MomentCheck>,
    /// Every moment within 3 s.e.
    pub passed: bool,
    /// Some moment more than 5 s.e. off.
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproductionConfig {
    pub iterations: usize,
    pub data_size: usize,
    pub truncation: usize,
    pub batches: usize,
}

impl Default for ReproductionConfig {
    fn default() -> Self {
        ReproductionConfig {
            iterations: 40_000,
            data_size: 5,
            truncation: 8,
            batches: 50,
        }
    }
}

/// Successive-conditional simulation: alternate a sampler sweep with a fresh
/// draw of allocations and data given the parameters. The parameter marginal
/// must stay at the prior, so moments of `σ^{-d}` and of the first stick are
/// compared with their exact prior values.
pub fn prior_reproduction_check(prior: &DPPrior, cfg: ReproductionConfig, seed: u64) -> Result<PriorReproductionReport> {
    if cfg.iterations < 2 * cfg.batches || cfg.data_size == 0 || cfg.truncation < 2 {
        return Err(Error::usage("reproduction check needs data, T ≥ 2 and enough iterations"));
    }
    let d = prior.dim();
    let fit_cfg = FitConfig {
        truncation: Some(cfg.truncation),
        iterations: cfg.iterations,
        burn_in: 0,
        thin: 1,
        sigma_step: 0.5,
        seed,
        adapt: false,
        ..FitConfig::default()
    };
    let dummy: Vec<Point> = (0..cfg.data_size).map(|_| Point::new(vec![0.0; d]).expect("finite")).collect();
    let mut sampler = GibbsSampler::new(&dummy, prior, fit_cfg)?;
    let mut rng = stream(seed, 1);
    // start from an exact prior draw
    let t = cfg.truncation;
    let mut sticks: Vec<f64> = (0..t - 1).map(|_| draw_stick(prior.alpha_mass(), &mut rng)).collect();
    sticks.push(1.0);
    let mut atoms = Vec::new();
    for _ in 0..t {
        prior.base.sample_into(&mut rng, &mut atoms);
    }
    let mut state = GibbsState {
        allocations: vec![0; cfg.data_size],
        sticks,
        atoms,
        sigma: prior.bandwidth.sample(&mut rng),
        iteration: 0,
        log_joint: 0.0,
    };
    let mut g = Vec::with_capacity(cfg.iterations);
    let mut v1 = Vec::with_capacity(cfg.iterations);
    let mut flat = vec![0.0; cfg.data_size * d];
    for _ in 0..cfg.iterations {
        // (s, x) | θ
        let w = state.weights();
        for i in 0..cfg.data_size {
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            let mut h = t - 1;
            for (k, wk) in w.iter().enumerate() {
                acc += wk;
                if u < acc {
                    h = k;
                    break;
                }
            }
            state.allocations[i] = h;
            for k in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                flat[i * d + k] = state.atoms[h * d + k] + state.sigma * e;
            }
        }
        sampler.set_data(&flat);
        sampler.set_state(state);
        // θ | x: the sweep starts by refreshing allocations, which is itself a valid Gibbs step
        sampler.sweep()?;
        state = sampler.state().clone();
        g.push(state.sigma.powf(-(d as f64)));
        v1.push(state.sticks[0]);
    }
    let (a, b) = (prior.bandwidth.shape(), prior.bandwidth.rate());
    let alpha = prior.alpha_mass();
    let g2: Vec<f64> = g.iter().map(|x| x * x).collect();
    let mut checks = Vec::new();
    for (name, series, expected) in [
        ("E[sigma^-d]", &g, a / b),
        ("E[sigma^-2d]", &g2, a * (a + 1.0) / (b * b)),
        ("E[V_1]", &v1, 1.0 / (1.0 + alpha)),
    ] {
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let se = batch_means_se(series, cfg.batches);
        checks.push(MomentCheck {
            name: name.to_string(),
            estimate: mean,
            se,
            expected,
            z: (mean - expected) / se,
        });
    }
    Ok(PriorReproductionReport {
        passed: checks.iter().all(|c| c.z.abs() <= 3.0),
        failed: checks.iter().any(|c| !(c.z.abs() <= 5.0)),
        checks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailedBalanceReport {
    /// Row-major Metropolis transition matrix.
    pub matrix: Vec<f64>,
    pub stationary: Vec<f64>,
    pub max_violation: f64,
    pub max_row_error: f64,
}

/// Transition matrix of the σ step restricted to the points `us` (values of
/// `log σ`), with proposals uniform over the other points.
pub fn sigma_detailed_balance(prior: &DPPrior, stats: SigmaStats, us: &[f64]) -> Result<DetailedBalanceReport> {
    let k = us.len();
    if k < 2 {
        return Err(Error::usage("need at least two states"));
    }
    let ln_pi: Vec<f64> = us.iter().map(|&u| sigma_log_target(prior, stats, u)).collect();
    let max = ln_pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = ln_pi.iter().map(|l| (l - max).exp()).sum();
    let pi: Vec<f64> = ln_pi.iter().map(|l| (l - max).exp() / z).collect();
    let q = 1.0 / (k - 1) as f64;
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        let mut stay = 1.0;
        for j in 0..k {
            if i != j {
                let p = q * metropolis_accept_prob(ln_pi[i], ln_pi[j]);
                m[i * k + j] = p;
                stay -= p;
            }
        }
        m[i * k + i] = stay;
    }
    let mut max_violation: f64 = 0.0;
    let mut max_row_error: f64 = 0.0;
    for i in 0..k {
        max_row_error = max_row_error.max((m[i * k..(i + 1) * k].iter().sum::<f64>() - 1.0).abs());
        for j in 0..k {
            max_violation = max_violation.max((pi[i] * m[i * k + j] - pi[j] * m[j * k + i]).abs());
        }
    }
    Ok(DetailedBalanceReport {
        matrix: m,
        stationary: pi,
        max_violation,
        max_row_error,
    })
}
