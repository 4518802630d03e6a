//! The `DP(α) × Ga(a, b)` prior on `(F, σ^{-d})`, drawn by stick-breaking.

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{DiscreteMeasure, MixtureDensity};
use crate::numeric::{gamma_cdf, gamma_sf, normal_cdf, normal_sf};
use crate::{Error, Result};

/// Hard cap on the number of sticks drawn for a single prior density.
pub const MAX_STICKS: usize = 1_000_000;

/// Box and complement mass of `[−a, a]^d` under the base measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxMass {
    pub inside: f64,
    pub outside: f64,
}

/// `α = |α|·N(0, τ²I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseMeasure {
    total_mass: f64,
    tau: f64,
    dim: usize,
}

impl BaseMeasure {
    pub fn gaussian(total_mass: f64, tau: f64, dim: usize) -> Result<Self> {
        if !(total_mass > 0.0 && total_mass.is_finite()) {
            return Err(Error::usage(format!("total mass |α| must be positive, got {total_mass}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::usage(format!("base scale τ must be positive, got {tau}")));
        }
        if dim == 0 {
            return Err(Error::usage("dimension must be at least 1"));
        }
        Ok(BaseMeasure {
            total_mass,
            tau,
            dim,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Log Lebesgue density of the normalized base measure.
    pub fn ln_density(&self, z: &[f64]) -> f64 {
        let sq: f64 = z.iter().map(|c| c * c).sum();
        let d = self.dim as f64;
        -0.5 * d * (2.0 * std::f64::consts::PI * self.tau * self.tau).ln() - sq / (2.0 * self.tau * self.tau)
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        self.ln_density(z).exp()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        for _ in 0..self.dim {
            let e: f64 = StandardNormal.sample(rng);
            out.push(self.tau * e);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim);
        self.sample_into(rng, &mut z);
        z
    }

    /// Mass of `[−a, a]^d` and of its complement, each computed without cancellation.
    pub fn mass_of_box(&self, a: f64) -> BoxMass {
        // per-axis mass outside [−a, a]
        let q = 2.0 * normal_sf(a / self.tau);
        let d = self.dim as f64;
        let ln_inside = d * (-q).ln_1p();
        BoxMass {
            inside: ln_inside.exp(),
            outside: -ln_inside.exp_m1(),
        }
    }

    /// The Gaussian-tail envelope `2d·exp(−a²/(2τ²))` dominating the complement mass.
    pub fn tail_envelope(&self, a: f64) -> f64 {
        2.0 * self.dim as f64 * (-a * a / (2.0 * self.tau * self.tau)).exp()
    }

    /// Mass of the axis-aligned box `Π [lo_i, hi_i]`.
    pub fn mass_of_rect(&self, lo: &[f64], hi: &[f64]) -> f64 {
        lo.iter()
            .zip(hi)
            .map(|(&l, &h)| self.mass_of_interval(l, h))
            .product()
    }

    /// One-axis mass of `[lo, hi]`, taking the difference in the tail it is most accurate in.
    pub fn mass_of_interval(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let (l, h) = (lo / self.tau, hi / self.tau);
        if l > 0.0 {
            normal_sf(l) - normal_sf(h)
        } else {
            normal_cdf(h) - normal_cdf(l)
        }
    }
}

/// `σ^{-d} ~ Ga(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthPrior {
    shape: f64,
    rate: f64,
    dim: usize,
}

impl BandwidthPrior {
    pub fn new(shape: f64, rate: f64, dim: usize) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
            return Err(Error::usage(format!(
                "gamma shape and rate must be positive, got ({shape}, {rate})"
            )));
        }
        if dim == 0 {
            return Err(Error::usage("dimension must be at least 1"));
        }
        Ok(BandwidthPrior { shape, rate, dim })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = Gamma::new(self.shape, 1.0 / self.rate)
            .expect("validated gamma parameters")
            .sample(rng);
        g.powf(-1.0 / self.dim as f64)
    }

    /// Log density of `u = ln σ` up to a constant: `−a·d·u − b·e^{−du}`.
    pub fn ln_density_log_sigma(&self, u: f64) -> f64 {
        let d = self.dim as f64;
        -self.shape * d * u - self.rate * (-d * u).exp()
    }

    /// `P(σ ≤ s)`, from the upper tail of `σ^{-d}`.
    pub fn cdf_sigma(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        gamma_sf(self.shape, self.rate, (-(self.dim as f64) * s.ln()).exp())
    }

    /// `P(σ ∉ (lo, exp(ln_hi)))`; the upper end is taken in log space so huge ceilings stay finite.
    pub fn prob_outside(&self, lo: f64, ln_hi: f64) -> f64 {
        let d = self.dim as f64;
        // σ ≤ lo  ⟺  G ≥ lo^{-d};  σ ≥ hi  ⟺  G ≤ hi^{-d}
        let below = gamma_sf(self.shape, self.rate, (-d * lo.ln()).exp());
        let above = gamma_cdf(self.shape, self.rate, (-d * ln_hi).exp());
        (below + above).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DPPrior {
    pub base: BaseMeasure,
    pub bandwidth: BandwidthPrior,
}

impl DPPrior {
    pub fn new(base: BaseMeasure, bandwidth: BandwidthPrior) -> Result<Self> {
        if base.dim() != bandwidth.dim() {
            return Err(Error::usage("base measure and bandwidth prior disagree on dimension"));
        }
        Ok(DPPrior { base, bandwidth })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn alpha_mass(&self) -> f64 {
        self.base.total_mass()
    }
}

/// Prior block of a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub alpha_mass: f64,
    pub base_tau: f64,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub dim: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            alpha_mass: 1.0,
            base_tau: 1.0,
            gamma_shape: 2.0,
            gamma_rate: 1.0,
            dim: 1,
        }
    }
}

impl PriorConfig {
    pub fn build(&self) -> Result<DPPrior> {
        DPPrior::new(
            BaseMeasure::gaussian(self.alpha_mass, self.base_tau, self.dim)?,
            BandwidthPrior::new(self.gamma_shape, self.gamma_rate, self.dim)?,
        )
    }
}

/// Sticks, weights and atoms of a truncated stick-breaking draw.
#[derive(Debug, Clone, PartialEq)]
pub struct StickBreakingDraw {
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row-major atom locations.
    pub atoms: Vec<f64>,
    pub dim: usize,
    /// `Π_{h ≤ H}(1 − V_h)`.
    pub tail_deficit: f64,
}

impl StickBreakingDraw {
    /// Assemble a draw from given sticks and atoms.
    pub fn from_sticks(sticks: Vec<f64>, atoms: Vec<f64>, dim: usize) -> Result<Self> {
        if sticks.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::usage("sticks must lie in [0, 1]"));
        }
        if atoms.len() != sticks.len() * dim {
            return Err(Error::usage("atom count does not match stick count"));
        }
        let mut rest = 1.0;
        let weights = sticks
            .iter()
            .map(|v| {
                let w = v * rest;
                rest *= 1.0 - v;
                w
            })
            .collect();
        Ok(StickBreakingDraw {
            sticks,
            weights,
            atoms,
            dim,
            tail_deficit: rest,
        })
    }

    pub fn len(&self) -> usize {
        self.sticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sticks.is_empty()
    }

    pub fn measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::from_flat(self.dim, self.atoms.clone(), self.weights.clone())
            .expect("stick-breaking weights form a sub-probability vector")
    }
}

/// One `Beta(1, α)` stick by inversion: `V = 1 − U^{1/α}`.
pub fn draw_stick<R: Rng + ?Sized>(alpha_mass: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(u.ln() / alpha_mass).exp_m1()
}

pub fn draw_stick_breaking<R: Rng + ?Sized>(prior: &DPPrior, h_trunc: usize, rng: &mut R) -> Result<StickBreakingDraw> {
    if h_trunc == 0 {
        return Err(Error::usage("stick truncation must be at least 1"));
    }
    let mut sticks = Vec::with_capacity(h_trunc);
    let mut atoms = Vec::with_capacity(h_trunc * prior.dim());
    for _ in 0..h_trunc {
        sticks.push(draw_stick(prior.alpha_mass(), rng));
        prior.base.sample_into(rng, &mut atoms);
    }
    StickBreakingDraw::from_sticks(sticks, atoms, prior.dim())
}

/// Extend the stick sequence until the remaining mass drops below `tail_tol`.
pub fn draw_sticks_until<R: Rng + ?Sized>(prior: &DPPrior, tail_tol: f64, rng: &mut R) -> Result<StickBreakingDraw> {
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(Error::usage(format!("tail tolerance must lie in (0, 1), got {tail_tol}")));
    }
    let mut sticks = Vec::new();
    let mut atoms = Vec::new();
    let mut rest = 1.0;
    while rest >= tail_tol {
        if sticks.len() == MAX_STICKS {
            return Err(Error::Resource(format!(
                "stick-breaking did not reach deficit {tail_tol} within {MAX_STICKS} sticks"
            )));
        }
        let v = draw_stick(prior.alpha_mass(), rng);
        rest *= 1.0 - v;
        sticks.push(v);
        prior.base.sample_into(rng, &mut atoms);
    }
    StickBreakingDraw::from_sticks(sticks, atoms, prior.dim())
}

pub fn draw_sigma<R: Rng + ?Sized>(prior: &DPPrior, rng: &mut R) -> f64 {
    prior.bandwidth.sample(rng)
}

/// A prior density with its sticks kept for sieve bookkeeping.
#[derive(Debug, Clone)]
pub struct PriorDraw {
    pub sticks: StickBreakingDraw,
    pub density: MixtureDensity,
}

pub fn draw_prior<R: Rng + ?Sized>(prior: &DPPrior, tail_tol: f64, rng: &mut R) -> Result<PriorDraw> {
    let sticks = draw_sticks_until(prior, tail_tol, rng)?;
    let sigma = draw_sigma(prior, rng);
    let density = MixtureDensity::new(sticks.measure(), sigma)?;
    Ok(PriorDraw { sticks, density })
}

/// Mixture with sticks drawn until the deficit is below `tail_tol`, and a fresh σ.
pub fn draw_prior_density<R: Rng + ?Sized>(prior: &DPPrior, tail_tol: f64, rng: &mut R) -> Result<MixtureDensity> {
    draw_prior(prior, tail_tol, rng).map(|d| d.density)
}

/// Exact `P(Σ_{h>H} π_h > ε) = P(Ga(H, |α|) < log(1/ε))`.
pub fn stick_tail_prob(h: usize, eps: f64, alpha_mass: f64) -> Result<f64> {
    check_tail_args(h, eps, alpha_mass)?;
    Ok(gamma_cdf(h as f64, alpha_mass, (1.0 / eps).ln()))
}

/// `(e|α| log(1/ε) / H)^H`.
pub fn stick_tail_stirling_bound(h: usize, eps: f64, alpha_mass: f64) -> Result<f64> {
    check_tail_args(h, eps, alpha_mass)?;
    let hf = h as f64;
    Ok((std::f64::consts::E * alpha_mass * (1.0 / eps).ln() / hf).powf(hf))
}

/// Monte Carlo frequency of `Σ_{h>H} π_h > ε` and its binomial s.e.
pub fn stick_tail_frequency(h: usize, eps: f64, alpha_mass: f64, n_sim: usize, seed: u64) -> Result<(f64, f64)> {
    check_tail_args(h, eps, alpha_mass)?;
    if n_sim == 0 {
        return Err(Error::usage("need at least one simulation"));
    }
    const CHUNK: usize = 4096;
    let hits: usize = (0..n_sim.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = crate::rng::stream(seed, c as u64);
            (c * CHUNK..((c + 1) * CHUNK).min(n_sim))
                .filter(|_| {
                    let rest: f64 = (0..h).map(|_| 1.0 - draw_stick(alpha_mass, &mut rng)).product();
                    rest > eps
                })
                .count()
        })
        .sum();
    let p = hits as f64 / n_sim as f64;
    Ok((p, (p * (1.0 - p) / n_sim as f64).sqrt()))
}

fn check_tail_args(h: usize, eps: f64, alpha_mass: f64) -> Result<()> {
    if h == 0 {
        return Err(Error::usage("H must be at least 1"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::usage(format!("ε must lie in (0, 1), got {eps}")));
    }
    if !(alpha_mass > 0.0) {
        return Err(Error::usage("|α| must be positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{ks_statistic, mean_se};
    use crate::rng::stream;

    fn prior(alpha: f64, shape: f64, rate: f64, d: usize) -> DPPrior {
        PriorConfig {
            alpha_mass: alpha,
            base_tau: 1.0,
            gamma_shape: shape,
            gamma_rate: rate,
            dim: d,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn constant_sticks_give_geometric_weights() {
        let d = StickBreakingDraw::from_sticks(vec![0.3; 6], vec![0.0; 6], 1).unwrap();
        for (h, w) in d.weights.iter().enumerate() {
            assert!((w - 0.3 * 0.7f64.powi(h as i32)).abs() < 1e-15);
        }
        assert!((d.tail_deficit - 0.7f64.powi(6)).abs() < 1e-15);
    }

    #[test]
    fn weights_and_deficit_sum_to_one() {
        let p = prior(2.5, 2.0, 1.0, 2);
        let mut rng = stream(1, 0);
        for _ in 0..50 {
            let d = draw_stick_breaking(&p, 40, &mut rng).unwrap();
            let direct: f64 = d.sticks.iter().map(|v| 1.0 - v).product();
            assert!((d.weights.iter().sum::<f64>() + d.tail_deficit - 1.0).abs() < 1e-12);
            assert!((d.tail_deficit - direct).abs() < 1e-14);
            assert!((d.measure().deficit() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn first_weight_mean_for_unit_mass() {
        let p = prior(1.0, 2.0, 1.0, 1);
        let mut rng = stream(2, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| draw_stick_breaking(&p, 1, &mut rng).unwrap().weights[0])
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.5).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn sigma_inverse_mean_and_ks() {
        let p1 = prior(1.0, 1.0, 1.0, 1);
        let mut rng = stream(3, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| 1.0 / draw_sigma(&p1, &mut rng)).collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 1.0).abs() < 3.0 * se);

        let p2 = prior(1.0, 0.6, 2.0, 2);
        let gs: Vec<f64> = (0..20_000).map(|_| draw_sigma(&p2, &mut rng).powi(-2)).collect();
        let ks = ks_statistic(&gs, |g| gamma_cdf(0.6, 2.0, g));
        // 1% critical value
        assert!(ks < 1.63 / (gs.len() as f64).sqrt(), "ks = {ks}");
        assert_eq!(draw_sigma(&p2, &mut stream(4, 4)), draw_sigma(&p2, &mut stream(4, 4)));
    }

    #[test]
    fn prior_density_respects_tail_tolerance() {
        let p = prior(0.2, 2.0, 1.0, 1);
        let mut rng = stream(5, 0);
        for _ in 0..10_000 {
            let m = draw_prior_density(&p, 0.5, &mut rng).unwrap();
            assert!(m.deficit() < 0.5);
        }
        assert!(draw_prior_density(&p, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mean_atom_count_matches_direct_simulation() {
        // Independent oracle: count exponential increments until their sum exceeds ln(1/tol).
        let p = prior(1.0, 2.0, 1.0, 1);
        let mut rng = stream(6, 0);
        let mut orng = stream(6, 1);
        let target = (1.0f64 / 1e-3).ln();
        let n = 20_000;
        let counts: Vec<f64> = (0..n)
            .map(|_| draw_prior_density(&p, 1e-3, &mut rng).unwrap().mixing().len() as f64)
            .collect();
        let oracle: Vec<f64> = (0..n)
            .map(|_| {
                let (mut s, mut k) = (0.0, 0);
                while s <= target {
                    s -= (1.0 - orng.random::<f64>()).ln();
                    k += 1;
                }
                k as f64
            })
            .collect();
        let (m1, s1) = mean_se(&counts);
        let (m2, s2) = mean_se(&oracle);
        // Poisson(ln 1000) + 1 has mean 7.908
        assert!((m1 - m2).abs() < 3.0 * (s1 * s1 + s2 * s2).sqrt(), "{m1} vs {m2}");
        assert!((m2 - (1.0 + target)).abs() < 4.0 * s2);
    }

    #[test]
    fn stick_tail_values() {
        let v = stick_tail_prob(1, (-1.0f64).exp(), 1.0).unwrap();
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-14);
        assert!(stick_tail_prob(3, 1.0 - 1e-12, 1.0).unwrap() < 1e-30);
        assert!(stick_tail_prob(3, 1.0, 1.0).is_err());
        assert!(stick_tail_prob(3, 0.0, 1.0).is_err());
        for h in [1, 2, 5, 20] {
            for a in [0.3, 1.0, 4.0] {
                for e in [0.5, 0.1, 1e-3] {
                    let p = stick_tail_prob(h, e, a).unwrap();
                    let b = stick_tail_stirling_bound(h, e, a).unwrap();
                    assert!(p <= b * (1.0 + 1e-12), "{h} {a} {e}: {p} > {b}");
                }
            }
        }
    }

    #[test]
    fn box_mass_closed_forms() {
        let b = BaseMeasure::gaussian(1.0, 1.0, 2).unwrap();
        let m = b.mass_of_box(1.0);
        // (erf(1/√2))² = 0.68268949213708585²
        assert!((m.inside - 0.466_064_942_674_392_3).abs() < 1e-14);
        assert!((m.inside + m.outside - 1.0).abs() < 1e-15);
        let far = b.mass_of_box(12.0);
        assert!(far.outside > 0.0 && far.outside <= b.tail_envelope(12.0));
        assert!((b.mass_of_interval(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-14);
    }

    #[test]
    fn bandwidth_outside_probability() {
        let bp = BandwidthPrior::new(2.0, 1.0, 1).unwrap();
        let lo = 0.1;
        let hi = 10.0f64;
        let direct = bp.cdf_sigma(lo) + (1.0 - bp.cdf_sigma(hi));
        assert!((bp.prob_outside(lo, hi.ln()) - direct).abs() < 1e-14);
        assert!(bp.prob_outside(1e-300, 1e6) < 1e-12);
    }
}
