//! Distances and divergences between evaluable densities.
//!
//! All four integrals (L1, squared Hellinger, `K`, `V`) are taken from one
//! pass over the quadrature nodes. The tensor-grid mode is the composite
//! midpoint rule; its reported error is `|I_N − I_{N/2}|`. The Monte Carlo
//! mode samples uniformly on the domain box and reports one standard error.
//!
//! Nodes are processed in fixed-size chunks, and chunk partial sums are
//! combined by pairwise summation in chunk order, so results do not depend on
//! the number of worker threads.

use rand::Rng;
use rayon::prelude::*;

use crate::density::MixtureDensity;
use crate::numeric::{clamped_exp, pairwise_sum};
use crate::rng::stream;
use crate::{Error, Result};

/// Points whose `p` falls below this contribute nothing to `K` and `V`.
pub const KL_P_FLOOR: f64 = 1e-300;
/// Ratio `p/q` is only tracked where `p` exceeds this.
pub const RATIO_P_FLOOR: f64 = 1e-12;
/// Mass a domain must capture before an accuracy warning is raised.
pub const MASS_TOL: f64 = 1e-6;
/// Support padding, in kernel bandwidths, for Gaussian mixtures.
pub const MIXTURE_PAD: f64 = 8.0;

const CHUNK: usize = 4096;

/// An axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::usage("box corners must have the same positive dimension"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::usage("box must be finite and nondegenerate"));
        }
        Ok(BoundingBox { lo, hi })
    }

    /// `[−a, a]^d`.
    pub fn cube(a: f64, dim: usize) -> Self {
        BoundingBox {
            lo: vec![-a; dim],
            hi: vec![a; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(c, (l, h))| c >= l && c <= h)
    }
}

/// A Lebesgue density that can be evaluated pointwise.
pub trait DensityFunction: Sync {
    fn dim(&self) -> usize;

    fn pdf(&self, x: &[f64]) -> f64;

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        self.pdf(x).ln()
    }

    /// `(p(x), ln p(x))`, with the log taken accurately where `p` underflows.
    fn pdf_and_ln(&self, x: &[f64]) -> (f64, f64) {
        let p = self.pdf(x);
        if p > 1e-290 {
            (p, p.ln())
        } else {
            (p, self.ln_pdf(x))
        }
    }

    /// A box carrying essentially all of the mass.
    fn support_hint(&self) -> BoundingBox;
}

impl DensityFunction for MixtureDensity {
    fn dim(&self) -> usize {
        MixtureDensity::dim(self)
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        MixtureDensity::pdf(self, x)
    }

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        MixtureDensity::ln_pdf(self, x)
    }

    fn support_hint(&self) -> BoundingBox {
        let (lo, hi) = self.mixing().bounding_box().expect("mixtures are nonempty");
        let pad = MIXTURE_PAD * self.sigma();
        BoundingBox {
            lo: lo.iter().map(|v| v - pad).collect(),
            hi: hi.iter().map(|v| v + pad).collect(),
        }
    }
}

impl<T: DensityFunction + ?Sized> DensityFunction for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn pdf(&self, x: &[f64]) -> f64 {
        (**self).pdf(x)
    }
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        (**self).ln_pdf(x)
    }
    fn pdf_and_ln(&self, x: &[f64]) -> (f64, f64) {
        (**self).pdf_and_ln(x)
    }
    fn support_hint(&self) -> BoundingBox {
        (**self).support_hint()
    }
}

/// A density given by a closure and an explicit support box.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
    support: BoundingBox,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnDensity<F> {
    pub fn new(support: BoundingBox, f: F) -> Self {
        FnDensity {
            dim: support.dim(),
            f,
            support,
        }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> DensityFunction for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn pdf(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn support_hint(&self) -> BoundingBox {
        self.support.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureMode {
    /// Composite midpoint rule with this many points per axis.
    Grid { points_per_axis: usize },
    /// Uniform sampling on the domain with this many points.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureScheme {
    pub mode: QuadratureMode,
    /// Integration box; `None` means the union of the support hints.
    pub domain: Option<BoundingBox>,
}

impl QuadratureScheme {
    /// Default tensor grid for dimension `d`.
    pub fn default_grid(dim: usize) -> Self {
        let points_per_axis = match dim {
            1 => 2048,
            2 => 512,
            _ => 128,
        };
        Self::grid(points_per_axis)
    }

    pub fn grid(points_per_axis: usize) -> Self {
        QuadratureScheme {
            mode: QuadratureMode::Grid { points_per_axis },
            domain: None,
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        QuadratureScheme {
            mode: QuadratureMode::MonteCarlo { samples, seed },
            domain: None,
        }
    }

    pub fn with_domain(mut self, domain: BoundingBox) -> Self {
        self.domain = Some(domain);
        self
    }

    fn resolution(&self) -> usize {
        match self.mode {
            QuadratureMode::Grid { points_per_axis } => points_per_axis,
            QuadratureMode::MonteCarlo { samples, .. } => samples,
        }
    }

    fn resolve_domain(&self, p: &dyn DensityFunction, q: &dyn DensityFunction) -> Result<BoundingBox> {
        if p.dim() != q.dim() {
            return Err(Error::usage(format!(
                "densities have dimensions {} and {}",
                p.dim(),
                q.dim()
            )));
        }
        if self.resolution() < 2 {
            return Err(Error::usage("quadrature resolution must be at least 2"));
        }
        let domain = match &self.domain {
            Some(b) => b.clone(),
            None => p.support_hint().union(&q.support_hint()),
        };
        if domain.dim() != p.dim() {
            return Err(Error::usage("quadrature domain has the wrong dimension"));
        }
        BoundingBox::new(domain.lo, domain.hi)
    }
}

/// Metadata carried by every estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeInfo {
    pub mode: &'static str,
    pub resolution: usize,
    pub domain: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricEstimate {
    pub value: f64,
    /// Grid: `|I_N − I_{N/2}|`. Monte Carlo: one standard error.
    pub error: f64,
    /// Set when the integrand is not integrable on the nodes (`K`, `V` only).
    pub infinite: bool,
    pub warnings: Vec<String>,
    pub scheme: SchemeInfo,
}

/// Every pairwise functional from one quadrature pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub l1: MetricEstimate,
    pub hellinger: MetricEstimate,
    pub kl: MetricEstimate,
    pub kl_second: MetricEstimate,
    /// `max |p − q|` over the nodes.
    pub sup_abs: f64,
    /// `max p/q` over nodes with `p > 1e-12`; an estimate of `‖p/q‖_∞`.
    pub sup_ratio: f64,
    pub mass_p: f64,
    pub mass_q: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Partial {
    l1: f64,
    h2: f64,
    kl: f64,
    v: f64,
    mass_p: f64,
    mass_q: f64,
    // squared terms for Monte Carlo variances
    l1_sq: f64,
    h2_sq: f64,
    kl_sq: f64,
    v_sq: f64,
    infinite: bool,
    sup_abs: f64,
    sup_ratio: f64,
}

#[inline]
fn accumulate(acc: &mut Partial, p: &dyn DensityFunction, q: &dyn DensityFunction, x: &[f64]) {
    let (pv, lp) = p.pdf_and_ln(x);
    let (qv, lq) = q.pdf_and_ln(x);
    let diff = (pv - qv).abs();
    let l1 = diff;
    let h2 = (pv.sqrt() - qv.sqrt()).powi(2);
    let (kl, v) = if pv < KL_P_FLOOR {
        (0.0, 0.0)
    } else if lq == f64::NEG_INFINITY {
        acc.infinite = true;
        (0.0, 0.0)
    } else {
        let r = lp - lq;
        (pv * r, pv * r * r)
    };
    acc.l1 += l1;
    acc.h2 += h2;
    acc.kl += kl;
    acc.v += v;
    acc.mass_p += pv;
    acc.mass_q += qv;
    acc.l1_sq += l1 * l1;
    acc.h2_sq += h2 * h2;
    acc.kl_sq += kl * kl;
    acc.v_sq += v * v;
    acc.sup_abs = acc.sup_abs.max(diff);
    if pv > RATIO_P_FLOOR {
        let r = lp - lq;
        let ratio = if r > 700.0 { f64::INFINITY } else { clamped_exp(r) };
        acc.sup_ratio = acc.sup_ratio.max(ratio);
    }
}

fn reduce(parts: &[Partial]) -> Partial {
    let field = |f: fn(&Partial) -> f64| pairwise_sum(&parts.iter().map(f).collect::<Vec<_>>());
    Partial {
        l1: field(|p| p.l1),
        h2: field(|p| p.h2),
        kl: field(|p| p.kl),
        v: field(|p| p.v),
        mass_p: field(|p| p.mass_p),
        mass_q: field(|p| p.mass_q),
        l1_sq: field(|p| p.l1_sq),
        h2_sq: field(|p| p.h2_sq),
        kl_sq: field(|p| p.kl_sq),
        v_sq: field(|p| p.v_sq),
        infinite: parts.iter().any(|p| p.infinite),
        sup_abs: parts.iter().map(|p| p.sup_abs).fold(0.0, f64::max),
        sup_ratio: parts.iter().map(|p| p.sup_ratio).fold(0.0, f64::max),
    }
}

/// Midpoint-rule sums (unscaled by the cell volume) over an `n^d` grid.
fn grid_pass(p: &dyn DensityFunction, q: &dyn DensityFunction, domain: &BoundingBox, n: usize) -> Result<Partial> {
    let d = domain.dim();
    let total = (n as u128).pow(d as u32);
    if total > 1u128 << 31 {
        return Err(Error::Resource(format!("quadrature grid of {total} nodes is too large")));
    }
    let total = total as usize;
    let steps: Vec<f64> = (0..d).map(|k| (domain.hi[k] - domain.lo[k]) / n as f64).collect();
    let chunks = total.div_ceil(CHUNK);
    let parts: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Partial::default();
            let mut x = vec![0.0; d];
            for i in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let mut rem = i;
                for k in 0..d {
                    x[k] = domain.lo[k] + ((rem % n) as f64 + 0.5) * steps[k];
                    rem /= n;
                }
                accumulate(&mut acc, p, q, &x);
            }
            acc
        })
        .collect();
    Ok(reduce(&parts))
}

fn mc_pass(p: &dyn DensityFunction, q: &dyn DensityFunction, domain: &BoundingBox, samples: usize, seed: u64) -> Partial {
    let d = domain.dim();
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let mut acc = Partial::default();
            let mut x = vec![0.0; d];
            for _ in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                for k in 0..d {
                    x[k] = rng.random_range(domain.lo[k]..domain.hi[k]);
                }
                accumulate(&mut acc, p, q, &x);
            }
            acc
        })
        .collect();
    reduce(&parts)
}

/// Compute L1, Hellinger, `K`, `V` and the sup statistics in one pass.
pub fn compare(p: &dyn DensityFunction, q: &dyn DensityFunction, scheme: &QuadratureScheme) -> Result<PairReport> {
    let domain = scheme.resolve_domain(p, q)?;
    let info = SchemeInfo {
        mode: match scheme.mode {
            QuadratureMode::Grid { .. } => "grid",
            QuadratureMode::MonteCarlo { .. } => "monte-carlo",
        },
        resolution: scheme.resolution(),
        domain: domain.clone(),
    };
    // (value, error) per functional, plus node statistics
    let (vals, errs, fine) = match scheme.mode {
        QuadratureMode::Grid { points_per_axis: n } => {
            let fine = grid_pass(p, q, &domain, n)?;
            let coarse = grid_pass(p, q, &domain, (n / 2).max(1))?;
            let cell = domain.volume() / (n as f64).powi(domain.dim() as i32);
            let ccell = domain.volume() / ((n / 2).max(1) as f64).powi(domain.dim() as i32);
            let f = [fine.l1, fine.h2, fine.kl, fine.v, fine.mass_p, fine.mass_q].map(|v| v * cell);
            let c = [coarse.l1, coarse.h2, coarse.kl, coarse.v, coarse.mass_p, coarse.mass_q].map(|v| v * ccell);
            let e = [0, 1, 2, 3, 4, 5].map(|i| (f[i] - c[i]).abs());
            (f, e, fine)
        }
        QuadratureMode::MonteCarlo { samples, seed } => {
            let acc = mc_pass(p, q, &domain, samples, seed);
            let vol = domain.volume();
            let n = samples as f64;
            let est = |s: f64, s2: f64| {
                let mean = s / n;
                let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
                (vol * mean, vol * (var / n).sqrt())
            };
            let pairs = [
                est(acc.l1, acc.l1_sq),
                est(acc.h2, acc.h2_sq),
                est(acc.kl, acc.kl_sq),
                est(acc.v, acc.v_sq),
                (vol * acc.mass_p / n, 0.0),
                (vol * acc.mass_q / n, 0.0),
            ];
            (pairs.map(|x| x.0), pairs.map(|x| x.1), acc)
        }
    };
    let mut warnings = Vec::new();
    for (name, mass) in [("p", vals[4]), ("q", vals[5])] {
        if (1.0 - mass).abs() > MASS_TOL {
            warnings.push(format!(
                "domain captures mass {mass:.9} of {name}, outside 1 ± {MASS_TOL:e}"
            ));
        }
    }
    let est = |value: f64, error: f64, infinite: bool| MetricEstimate {
        value,
        error,
        infinite,
        warnings: warnings.clone(),
        scheme: info.clone(),
    };
    let h2 = vals[1].max(0.0);
    let h = h2.sqrt();
    let h_err = if h > 0.0 { errs[1] / (2.0 * h) } else { errs[1].sqrt() };
    let kl = if fine.infinite {
        est(f64::INFINITY, 0.0, true)
    } else {
        est(vals[2], errs[2], false)
    };
    let kl2 = if fine.infinite {
        est(f64::INFINITY, 0.0, true)
    } else {
        est(vals[3], errs[3], false)
    };
    Ok(PairReport {
        l1: est(vals[0], errs[0], false),
        hellinger: est(h, h_err, false),
        kl,
        kl_second: kl2,
        sup_abs: fine.sup_abs,
        sup_ratio: fine.sup_ratio,
        mass_p: vals[4],
        mass_q: vals[5],
    })
}

/// `∫|p − q|`.
pub fn l1_distance(p: &dyn DensityFunction, q: &dyn DensityFunction, scheme: &QuadratureScheme) -> Result<MetricEstimate> {
    compare(p, q, scheme).map(|r| r.l1)
}

/// `[∫(√p − √q)²]^{1/2}`, taking values in `[0, √2]`.
pub fn hellinger(p: &dyn DensityFunction, q: &dyn DensityFunction, scheme: &QuadratureScheme) -> Result<MetricEstimate> {
    compare(p, q, scheme).map(|r| r.hellinger)
}

/// `K(p, q) = ∫ p log(p/q)`.
pub fn kl_div(p: &dyn DensityFunction, q: &dyn DensityFunction, scheme: &QuadratureScheme) -> Result<MetricEstimate> {
    compare(p, q, scheme).map(|r| r.kl)
}

/// `V(p, q) = ∫ p log²(p/q)`.
pub fn kl_second(p: &dyn DensityFunction, q: &dyn DensityFunction, scheme: &QuadratureScheme) -> Result<MetricEstimate> {
    compare(p, q, scheme).map(|r| r.kl_second)
}

/// Whether `q` lies in the KL ball `{K(p0, q) ≤ ε², V(p0, q) ≤ ε²}`.
pub fn kl_ball_contains(
    p0: &dyn DensityFunction,
    q: &dyn DensityFunction,
    eps: f64,
    scheme: &QuadratureScheme,
) -> Result<bool> {
    if !(eps > 0.0) {
        return Err(Error::usage("ε must be positive"));
    }
    let r = compare(p0, q, scheme)?;
    if r.kl.infinite || r.kl_second.infinite {
        return Ok(false);
    }
    Ok(r.kl.value <= eps * eps && r.kl_second.value <= eps * eps)
}

/// `max |p − q|` over the nodes of a midpoint grid on `domain`.
pub fn sup_distance(p: &dyn DensityFunction, q: &dyn DensityFunction, domain: &BoundingBox, points_per_axis: usize) -> Result<f64> {
    if p.dim() != q.dim() || domain.dim() != p.dim() {
        return Err(Error::usage("dimension mismatch"));
    }
    Ok(grid_pass(p, q, domain, points_per_axis)?.sup_abs)
}

/// Midpoint nodes of a one-dimensional grid.
pub fn midpoints(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DiscreteMeasure;
    use crate::numeric::normal_cdf;

    fn normal(mu: &[f64], sigma: f64) -> MixtureDensity {
        MixtureDensity::new(DiscreteMeasure::dirac(mu).unwrap(), sigma).unwrap()
    }

    fn uniform(lo: f64, hi: f64) -> FnDensity<impl Fn(&[f64]) -> f64 + Sync> {
        FnDensity::new(BoundingBox::new(vec![lo], vec![hi]).unwrap(), move |x: &[f64]| {
            if x[0] >= lo && x[0] <= hi {
                1.0 / (hi - lo)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn identical_arguments_give_zero() {
        let p = normal(&[0.3], 1.2);
        let r = compare(&p, &p, &QuadratureScheme::default_grid(1)).unwrap();
        assert_eq!(r.l1.value, 0.0);
        assert_eq!(r.hellinger.value, 0.0);
        assert_eq!(r.kl.value, 0.0);
        assert_eq!(r.kl_second.value, 0.0);
        assert!(r.l1.warnings.is_empty());
    }

    #[test]
    fn disjoint_uniforms() {
        let p = uniform(0.0, 1.0);
        let q = uniform(2.0, 3.0);
        let s = QuadratureScheme::grid(3000).with_domain(BoundingBox::new(vec![0.0], vec![3.0]).unwrap());
        let r = compare(&p, &q, &s).unwrap();
        assert!((r.l1.value - 2.0).abs() < 1e-12);
        assert!((r.hellinger.value - 2f64.sqrt()).abs() < 1e-12);
        assert!(r.kl.infinite && r.kl.value.is_infinite());
        assert!(!kl_ball_contains(&p, &q, 10.0, &s).unwrap());
    }

    #[test]
    fn gaussian_closed_forms() {
        let s = QuadratureScheme::grid(1 << 17);
        for delta in [0.1, 0.5, 1.0, 2.0] {
            let p = normal(&[0.0], 1.0);
            let q = normal(&[delta], 1.0);
            let r = compare(&p, &q, &s).unwrap();
            let l1 = 2.0 * (2.0 * normal_cdf(delta / 2.0) - 1.0);
            let h2 = 2.0 * (1.0 - (-delta * delta / 8.0f64).exp());
            assert!((r.l1.value - l1).abs() < 1e-6, "{delta}");
            assert!((r.hellinger.value.powi(2) - h2).abs() < 1e-6);
            assert!((r.kl.value - delta * delta / 2.0).abs() < 1e-6);
            let v = delta * delta + delta.powi(4) / 4.0;
            assert!((r.kl_second.value - v).abs() < 1e-6);
            assert!(r.kl_second.value >= r.kl.value.powi(2));
        }
    }

    #[test]
    fn kl_ball_examples() {
        let p = normal(&[0.0], 1.0);
        let q = normal(&[0.1], 1.0);
        let s = QuadratureScheme::default_grid(1);
        assert!(kl_ball_contains(&p, &q, 0.2, &s).unwrap());
        assert!(!kl_ball_contains(&p, &q, 0.05, &s).unwrap());
        assert!(kl_ball_contains(&p, &p, 1e-9, &s).unwrap());
    }

    #[test]
    fn compact_p_against_positive_mixture_is_finite() {
        let p = uniform(-1.0, 1.0);
        let q = normal(&[0.0], 1.0);
        let r = compare(&p, &q, &QuadratureScheme::default_grid(1)).unwrap();
        assert!(!r.kl.infinite && r.kl.value.is_finite() && r.kl.value > 0.0);
    }

    #[test]
    fn grid_and_monte_carlo_agree_in_two_dims() {
        let p = normal(&[0.0, 0.0], 1.0);
        let q = normal(&[0.8, -0.4], 1.3);
        let g = compare(&p, &q, &QuadratureScheme::default_grid(2)).unwrap();
        let m = compare(&p, &q, &QuadratureScheme::monte_carlo(400_000, 3)).unwrap();
        for (a, b) in [(&g.l1, &m.l1), (&g.hellinger, &m.hellinger), (&g.kl, &m.kl)] {
            assert!((a.value - b.value).abs() <= 3.0 * (a.error + b.error), "{a:?} {b:?}");
        }
    }

    #[test]
    fn reduction_is_deterministic() {
        let p = normal(&[0.0, 0.1], 0.7);
        let q = normal(&[0.5, 0.0], 1.0);
        let s = QuadratureScheme::default_grid(2);
        let a = compare(&p, &q, &s).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| compare(&p, &q, &s).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let p = normal(&[0.0], 1.0);
        let q = normal(&[0.0, 0.0], 1.0);
        assert!(matches!(
            l1_distance(&p, &q, &QuadratureScheme::default_grid(1)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn narrow_domain_warns() {
        let p = normal(&[0.0], 1.0);
        let s = QuadratureScheme::default_grid(1).with_domain(BoundingBox::cube(2.0, 1));
        let r = l1_distance(&p, &p, &s).unwrap();
        assert!(!r.warnings.is_empty());
    }
}
