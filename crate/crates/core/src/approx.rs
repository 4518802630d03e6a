//! Approximation machinery around a mixing distribution `P0`: Gaussian
//! smoothing, moment-matched discretization, grid snapping, partition
//! perturbation bounds, Dirichlet small-ball probabilities, the σ² smoothing
//! audit and the thickness partition.
//!
//! Compact densities are products of one-dimensional factors on `[−s, s]`.
//! Smoothing, moments and Hellinger distances then factorize over axes.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::density::{DiscreteMeasure, MixtureDensity};
use crate::metrics::{compare, sup_distance, BoundingBox, DensityFunction, QuadratureScheme};
use crate::numeric::{fit_line, LineFit};
use crate::orthopoly::{gauss_legendre, legendre_recurrence, modified_chebyshev, monic_legendre_values, GaussRule};
use crate::prior::BaseMeasure;
use crate::rng::stream;
use crate::{Error, Result};

/// One-dimensional shape on `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    /// `c_m (1 − x²)^m`; `m = 0` is the uniform, `m = 3` the triweight.
    Polynomial(u32),
    /// `1 − |x|`, kinked at the origin.
    Tent,
}

impl Factor {
    fn norm(self) -> f64 {
        match self {
            Factor::Polynomial(m) => {
                let m = m as f64;
                (ln_gamma(m + 1.5) - ln_gamma(m + 1.0)).exp() / std::f64::consts::PI.sqrt()
            }
            Factor::Tent => 1.0,
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        if x.abs() > 1.0 {
            return 0.0;
        }
        match self {
            Factor::Polynomial(m) => self.norm() * (1.0 - x * x).powi(m as i32),
            Factor::Tent => 1.0 - x.abs(),
        }
    }

    /// `(f, f′, f″)` where they exist.
    pub fn derivatives(self, x: f64) -> Option<(f64, f64, f64)> {
        match self {
            Factor::Tent => None,
            Factor::Polynomial(m) => {
                if x.abs() > 1.0 {
                    return Some((0.0, 0.0, 0.0));
                }
                let c = self.norm();
                let u = 1.0 - x * x;
                let mf = m as f64;
                let pw = |k: i64| if k < 0 { 0.0 } else { u.powi(k as i32) };
                let m = m as i64;
                let f = c * pw(m);
                let d1 = c * mf * pw(m - 1) * (-2.0 * x);
                let d2 = c * (mf * (mf - 1.0) * pw(m - 2) * 4.0 * x * x - 2.0 * mf * pw(m - 1));
                Some((f, d1, d2))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Factor::Polynomial(m) => {
                let b = Beta::new(m as f64 + 1.0, m as f64 + 1.0).expect("positive shape");
                2.0 * b.sample(rng) - 1.0
            }
            Factor::Tent => rng.random::<f64>() + rng.random::<f64>() - 1.0,
        }
    }

    /// Interior points where the factor is not smooth.
    pub fn breakpoints(self) -> &'static [f64] {
        match self {
            Factor::Polynomial(_) => &[],
            Factor::Tent => &[0.0],
        }
    }

    /// Two continuous derivatives on the whole line.
    pub fn is_c2(self) -> bool {
        matches!(self, Factor::Polynomial(m) if m >= 3)
    }

    /// Whether `∫(f′/f)⁴ f` and `∫(f″/f)² f` are finite.
    pub fn score_integrals_finite(self) -> bool {
        matches!(self, Factor::Polynomial(m) if m >= 4)
    }

    /// Polynomial degree, used to size exact quadratures.
    fn degree(self) -> usize {
        match self {
            Factor::Polynomial(m) => 2 * m as usize,
            Factor::Tent => 1,
        }
    }
}

/// Product density `Π_i f_i(x_i/s)/s` on `[−s, s]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactDensity {
    pub factors: Vec<Factor>,
    pub scale: f64,
}

impl CompactDensity {
    pub fn new(factors: Vec<Factor>, scale: f64) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::usage("compact density needs at least one axis"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::usage("support half-width must be positive"));
        }
        Ok(CompactDensity { factors, scale })
    }

    pub fn uniform(dim: usize, a: f64) -> Result<Self> {
        Self::new(vec![Factor::Polynomial(0); dim], a)
    }

    /// `(35/32)(1 − x²)³` per axis on `[−1, 1]`.
    pub fn triweight(dim: usize) -> Result<Self> {
        Self::new(vec![Factor::Polynomial(3); dim], 1.0)
    }

    pub fn tent(dim: usize) -> Result<Self> {
        Self::new(vec![Factor::Tent; dim], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn axis_pdf(&self, axis: usize, x: f64) -> f64 {
        self.factors[axis].pdf(x / self.scale) / self.scale
    }

    /// Gradient of the density, when every factor is differentiable.
    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (vals, d1, _) = self.axis_derivatives(x)?;
        Some(
            (0..self.dim())
                .map(|i| d1[i] * vals.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).product::<f64>())
                .collect(),
        )
    }

    /// Row-major Hessian of the density.
    pub fn hessian(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (vals, d1, d2) = self.axis_derivatives(x)?;
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut v = 1.0;
                for k in 0..d {
                    v *= if i == j && k == i {
                        d2[k]
                    } else if k == i || k == j {
                        d1[k]
                    } else {
                        vals[k]
                    };
                }
                out[i * d + j] = v;
            }
        }
        Some(out)
    }

    fn axis_derivatives(&self, x: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let s = self.scale;
        let mut f = Vec::with_capacity(x.len());
        let mut d1 = Vec::with_capacity(x.len());
        let mut d2 = Vec::with_capacity(x.len());
        for (fac, &c) in self.factors.iter().zip(x) {
            let (a, b, e) = fac.derivatives(c / s)?;
            f.push(a / s);
            d1.push(b / (s * s));
            d2.push(e / (s * s * s));
        }
        Some((f, d1, d2))
    }

    pub fn sample_flat<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            for f in &self.factors {
                out.push(self.scale * f.sample(rng));
            }
        }
        out
    }

    pub fn support(&self) -> BoundingBox {
        BoundingBox::cube(self.scale, self.dim())
    }

    /// Breakpoints of axis `i` in data coordinates, including the support ends.
    fn axis_breaks(&self, axis: usize) -> Vec<f64> {
        let s = self.scale;
        let mut b = vec![-s];
        b.extend(self.factors[axis].breakpoints().iter().map(|t| t * s));
        b.push(s);
        b
    }
}

impl DensityFunction for CompactDensity {
    fn dim(&self) -> usize {
        CompactDensity::dim(self)
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(i, &c)| self.axis_pdf(i, c)).product()
    }

    fn support_hint(&self) -> BoundingBox {
        self.support()
    }
}

/// Panel layout for one-dimensional convolutions and Hellinger integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolutionScheme {
    pub nodes_per_panel: usize,
    /// Panel width in units of σ.
    pub panel_sigmas: f64,
    /// Kernel truncation radius in units of σ.
    pub reach_sigmas: f64,
}

impl Default for ConvolutionScheme {
    fn default() -> Self {
        ConvolutionScheme {
            nodes_per_panel: 20,
            panel_sigmas: 1.0,
            reach_sigmas: 12.0,
        }
    }
}

impl ConvolutionScheme {
    /// Settings used for the smoothing-rate audit.
    pub fn fine() -> Self {
        ConvolutionScheme {
            nodes_per_panel: 40,
            panel_sigmas: 0.5,
            reach_sigmas: 12.0,
        }
    }
}

/// Composite Gauss-Legendre integration of `f` over `[lo, hi]`, splitting at `breaks`
/// and into panels no wider than `width`.
fn composite(rule: &GaussRule, lo: f64, hi: f64, breaks: &[f64], width: f64, f: impl Fn(f64) -> f64) -> f64 {
    if !(hi > lo) {
        return 0.0;
    }
    let mut edges = vec![lo];
    edges.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    edges.push(hi);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let panels = ((w[1] - w[0]) / width).ceil().max(1.0) as usize;
        let step = (w[1] - w[0]) / panels as f64;
        for p in 0..panels {
            let a = w[0] + p as f64 * step;
            let half = 0.5 * step;
            let mid = a + half;
            total += half * rule.nodes.iter().zip(&rule.weights).map(|(&t, &wt)| wt * f(mid + half * t)).sum::<f64>();
        }
    }
    total
}

/// `p0 * N(0, σ²I)` for a compact product density, by per-axis quadrature.
#[derive(Debug, Clone)]
pub struct SmoothedCompact {
    density: CompactDensity,
    sigma: f64,
    scheme: ConvolutionScheme,
    rule: GaussRule,
    breaks: Vec<Vec<f64>>,
}

impl SmoothedCompact {
    pub fn new(density: CompactDensity, sigma: f64, scheme: ConvolutionScheme) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::usage("σ must be positive"));
        }
        let breaks = (0..density.dim()).map(|i| density.axis_breaks(i)).collect();
        Ok(SmoothedCompact {
            rule: gauss_legendre(scheme.nodes_per_panel),
            density,
            sigma,
            scheme,
            breaks,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `∫ f_i(y) φ_σ(x − y) dy`.
    pub fn axis_pdf(&self, axis: usize, x: f64) -> f64 {
        let s = self.density.scale;
        let reach = self.scheme.reach_sigmas * self.sigma;
        let lo = (-s).max(x - reach);
        let hi = s.min(x + reach);
        let norm = 1.0 / (self.sigma * (2.0 * std::f64::consts::PI).sqrt());
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        composite(&self.rule, lo, hi, &self.breaks[axis], self.scheme.panel_sigmas * self.sigma, |y| {
            self.density.axis_pdf(axis, y) * norm * (-(x - y) * (x - y) * inv).exp()
        })
    }
}

impl DensityFunction for SmoothedCompact {
    fn dim(&self) -> usize {
        self.density.dim()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(i, &c)| self.axis_pdf(i, c)).product()
    }

    fn support_hint(&self) -> BoundingBox {
        BoundingBox::cube(self.density.scale + 8.0 * self.sigma, self.dim())
    }
}

/// A mixing distribution: finitely supported, or a compact density.
#[derive(Debug, Clone)]
pub enum MixingDistribution {
    Discrete(DiscreteMeasure),
    Compact(CompactDensity),
}

impl MixingDistribution {
    pub fn dim(&self) -> usize {
        match self {
            MixingDistribution::Discrete(m) => m.dim(),
            MixingDistribution::Compact(c) => c.dim(),
        }
    }
}

/// `p_{P0,σ}`.
#[derive(Debug, Clone)]
pub enum Smoothed {
    /// Exact finite sum.
    Mixture(MixtureDensity),
    Compact(SmoothedCompact),
}

impl DensityFunction for Smoothed {
    fn dim(&self) -> usize {
        match self {
            Smoothed::Mixture(m) => DensityFunction::dim(m),
            Smoothed::Compact(c) => c.dim(),
        }
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        match self {
            Smoothed::Mixture(m) => m.pdf(x),
            Smoothed::Compact(c) => c.pdf(x),
        }
    }

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        match self {
            Smoothed::Mixture(m) => m.ln_pdf(x),
            Smoothed::Compact(c) => c.pdf(x).ln(),
        }
    }

    fn support_hint(&self) -> BoundingBox {
        match self {
            Smoothed::Mixture(m) => m.support_hint(),
            Smoothed::Compact(c) => c.support_hint(),
        }
    }
}

pub fn smooth(p0: &MixingDistribution, sigma: f64, scheme: ConvolutionScheme) -> Result<Smoothed> {
    match p0 {
        MixingDistribution::Discrete(m) => Ok(Smoothed::Mixture(MixtureDensity::new(m.clone(), sigma)?)),
        MixingDistribution::Compact(c) => Ok(Smoothed::Compact(SmoothedCompact::new(c.clone(), sigma, scheme)?)),
    }
}

/// How `[−a, a]` is cut into cells and how many Gauss nodes each cell gets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum CellRule {
    /// Cells of side σ and `⌈c·log(1/ε)⌉` nodes each.
    SigmaCells { c: f64 },
    /// `k = ⌈c·log(1/ε)⌉` nodes, and the widest cell for which the Gauss
    /// remainder bound `4(w/4σ)^{2k} / (2^k k! √(2π))` is at most ε.
    ErrorTargeted { c: f64 },
}

impl Default for CellRule {
    fn default() -> Self {
        CellRule::ErrorTargeted { c: 0.5 }
    }
}

impl CellRule {
    /// `(nodes per cell, cell width)`.
    pub fn layout(self, sigma: f64, eps: f64) -> (usize, f64) {
        let l = (1.0 / eps).ln();
        match self {
            CellRule::SigmaCells { c } => (((c * l).ceil() as usize).max(1), sigma),
            CellRule::ErrorTargeted { c } => {
                let k = ((c * l).ceil() as usize).max(1);
                let kf = k as f64;
                // solve 4 (w/4σ)^{2k} / (2^k k! √(2π)) = ε for w, in logs
                let ln_rhs = eps.ln() + kf * 2f64.ln() + ln_gamma(kf + 1.0) + 0.5 * (2.0 * std::f64::consts::PI).ln() - 4f64.ln();
                (k, 4.0 * sigma * (ln_rhs / (2.0 * kf)).exp())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscretizationResult {
    pub measure: DiscreteMeasure,
    pub atom_count: usize,
    pub sup_error: f64,
    pub l1_error: f64,
    /// `[((a/σ) ∨ 1) log(1/ε)]^d`; the atom budget is `D` times this.
    pub budget_form: f64,
    pub nodes_per_cell: usize,
    pub cell_width: f64,
    /// Cells whose moment recursion broke down and got fewer nodes.
    pub degraded_cells: usize,
}

/// Per-axis moment-matched rule: `(nodes, weights, degraded cells)`.
fn discretize_axis(density: &CompactDensity, axis: usize, k: usize, width: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let s = density.scale;
    let factor = density.factors[axis];
    let rule = gauss_legendre((factor.degree() / 2 + k + 8).max(32));
    let basis = legendre_recurrence(2 * k);
    let breaks = density.axis_breaks(axis);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut degraded = 0;
    let mut lo = -s;
    while lo < s {
        let hi = (lo + width).min(s);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let moments: Vec<f64> = (0..2 * k)
            .map(|j| {
                composite(&rule, lo, hi, &breaks, f64::INFINITY, |x| {
                    density.axis_pdf(axis, x) * monic_legendre_values((x - mid) / half, 2 * k)[j]
                })
            })
            .collect();
        if moments[0] > 0.0 {
            let rec = modified_chebyshev(&moments, &basis);
            if rec.len() < k {
                degraded += 1;
            }
            if !rec.is_empty() {
                let g = rec.gauss(rec.len()).expect("order within recurrence length");
                for (t, w) in g.nodes.iter().zip(&g.weights) {
                    nodes.push(mid + half * t.clamp(-1.0, 1.0));
                    weights.push(*w);
                }
            }
        }
        if hi >= s {
            break;
        }
        lo = hi;
    }
    (nodes, weights, degraded)
}

/// Replace `P0` by a finite measure that matches its moments cell by cell, and
/// measure how far the induced mixtures are apart.
pub fn discretize(p0: &MixingDistribution, sigma: f64, eps: f64, rule: CellRule) -> Result<DiscretizationResult> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::usage(format!("ε must lie in (0, 1/2), got {eps}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::usage("σ must be positive"));
    }
    let d = p0.dim();
    let (k, width) = rule.layout(sigma, eps);
    let (measure, a, degraded) = match p0 {
        MixingDistribution::Discrete(m) => {
            let a = m
                .atoms()
                .flat_map(|(z, _)| z.iter().map(|c| c.abs()).collect::<Vec<_>>())
                .fold(0.0, f64::max);
            (m.clone(), a, 0)
        }
        MixingDistribution::Compact(c) => {
            let axes: Vec<_> = (0..d).map(|i| discretize_axis(c, i, k, width)).collect();
            let degraded = axes.iter().map(|a| a.2).sum();
            let mut locs = Vec::new();
            let mut weights = Vec::new();
            let total: usize = axes.iter().map(|a| a.0.len()).product();
            for mut r in 0..total {
                let mut w = 1.0;
                let start = locs.len();
                locs.resize(start + d, 0.0);
                for i in (0..d).rev() {
                    let n = axes[i].0.len();
                    locs[start + i] = axes[i].0[r % n];
                    w *= axes[i].1[r % n];
                    r /= n;
                }
                weights.push(w);
            }
            let tot: f64 = weights.iter().sum();
            let measure = DiscreteMeasure::from_flat(d, locs, weights.iter().map(|w| w / tot).collect())?;
            (measure, c.scale, degraded)
        }
    };
    let target = smooth(p0, sigma, ConvolutionScheme::default())?;
    let approx = MixtureDensity::new(measure.clone(), sigma)?;
    let domain = target.support_hint().union(&approx.support_hint());
    let dense = match d {
        1 => 8192,
        2 => 256,
        _ => 64,
    };
    let sup_error = sup_distance(&target, &approx, &domain, dense)?;
    let l1_error = compare(&target, &approx, &QuadratureScheme::default_grid(d).with_domain(domain))?
        .l1
        .value;
    let budget_form = ((a / sigma).max(1.0) * (1.0 / eps).ln()).powi(d as i32);
    Ok(DiscretizationResult {
        atom_count: measure.len(),
        measure,
        sup_error,
        l1_error,
        budget_form,
        nodes_per_cell: k,
        cell_width: width,
        degraded_cells: degraded,
    })
}

/// Move every atom to the nearest point of the `σε`-spaced lattice (ties to the lower point).
pub fn snap_to_grid(f: &DiscreteMeasure, sigma: f64, eps: f64, a: f64, merge: bool) -> Result<DiscreteMeasure> {
    if !(sigma > 0.0 && eps > 0.0) {
        return Err(Error::usage("σ and ε must be positive"));
    }
    if f.locations().iter().any(|c| c.abs() > a) {
        return Err(Error::usage(format!("atoms must lie in [−{a}, {a}]^d")));
    }
    let h = sigma * eps;
    let locs = f
        .locations()
        .iter()
        .map(|&c| {
            // atoms already on the lattice stay bit-identical
            let t = c / h;
            if (t - t.round()).abs() <= 1e-9 * t.abs().max(1.0) {
                c
            } else {
                h * (t - 0.5).ceil()
            }
        })
        .collect();
    let snapped = DiscreteMeasure::from_flat(f.dim(), locs, f.weights().to_vec())?;
    Ok(if merge { snapped.merged() } else { snapped })
}

/// Half-open cell `[lo, hi)`; infinite ends allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Cell {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(c, (l, h))| c >= l && c < h)
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Ball,
    Box,
    Outer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionScheme {
    pub cells: Vec<Cell>,
    pub kinds: Vec<CellKind>,
    pub diameters: Vec<f64>,
    /// Base-measure masses `ᾱ(U_j)`.
    pub masses: Vec<f64>,
    /// Target weights `p_j`.
    pub targets: Vec<f64>,
}

impl PartitionScheme {
    fn from_cells(cells: Vec<Cell>, kinds: Vec<CellKind>, targets: Vec<f64>, base: &BaseMeasure) -> Self {
        PartitionScheme {
            diameters: cells.iter().map(Cell::diameter).collect(),
            masses: cells.iter().map(|c| base.mass_of_rect(&c.lo, &c.hi)).collect(),
            cells,
            kinds,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Index of the cell holding `x`, if any.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        self.cells.iter().position(|c| c.contains(x))
    }

    /// Number of cells holding `x`; exactly one for a disjoint cover.
    pub fn multiplicity(&self, x: &[f64]) -> usize {
        self.cells.iter().filter(|c| c.contains(x)).count()
    }
}

/// Regular grid of `per_axis^d` boxes over `[−a, a)^d`, with zero targets.
pub fn grid_partition(a: f64, per_axis: usize, dim: usize, base: &BaseMeasure) -> Result<PartitionScheme> {
    if !(a > 0.0) || per_axis == 0 || dim == 0 {
        return Err(Error::usage("grid partition needs a > 0 and at least one cell"));
    }
    let step = 2.0 * a / per_axis as f64;
    let total = per_axis.pow(dim as u32);
    let cells: Vec<Cell> = (0..total)
        .map(|mut r| {
            let mut lo = vec![0.0; dim];
            let mut hi = vec![0.0; dim];
            for i in (0..dim).rev() {
                let j = r % per_axis;
                r /= per_axis;
                lo[i] = -a + j as f64 * step;
                hi[i] = if j + 1 == per_axis { a } else { -a + (j + 1) as f64 * step };
            }
            Cell { lo, hi }
        })
        .collect();
    let n = cells.len();
    Ok(PartitionScheme::from_cells(cells, vec![CellKind::Box; n], vec![0.0; n], base))
}

/// `F` collapsed onto the cell centres, one atom per cell carrying `F(V_j)`.
pub fn collapse(f: &DiscreteMeasure, partition: &PartitionScheme) -> Result<DiscreteMeasure> {
    let mut weights = vec![0.0; partition.len()];
    for (z, w) in f.atoms() {
        let j = partition
            .locate(z)
            .ok_or_else(|| Error::usage("an atom lies outside every cell"))?;
        weights[j] += w;
    }
    let mut locs = Vec::with_capacity(partition.len() * f.dim());
    for c in &partition.cells {
        if c.lo.iter().chain(&c.hi).any(|v| !v.is_finite()) {
            return Err(Error::usage("cannot collapse onto an unbounded cell"));
        }
        locs.extend(c.center());
    }
    DiscreteMeasure::from_flat(f.dim(), locs, weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub max_diameter: f64,
    /// `Σ_j |F(V_j) − p_j|`, plus any `F`-mass outside the cells.
    pub mass_discrepancy: f64,
    /// `max diam / σ + discrepancy`.
    pub rhs: f64,
    pub l1: f64,
    pub sup: f64,
    pub ratio: f64,
}

/// Measured `‖p_{F,σ} − p_{F′,σ}‖₁` against `(1/σ) max diam(V_j) + Σ|F(V_j) − p_j|`.
pub fn perturbation_bound_check(
    f: &DiscreteMeasure,
    f_prime: &DiscreteMeasure,
    partition: &PartitionScheme,
    sigma: f64,
    scheme: &QuadratureScheme,
) -> Result<PerturbationReport> {
    if f_prime.len() != partition.len() {
        return Err(Error::usage("F′ needs exactly one atom per cell"));
    }
    for (j, (z, _)) in f_prime.atoms().enumerate() {
        if !partition.cells[j].contains(z) {
            return Err(Error::usage(format!("atom {j} of F′ is not in cell {j}")));
        }
    }
    let mut cell_mass = vec![0.0; partition.len()];
    let mut stray = 0.0;
    for (z, w) in f.atoms() {
        match partition.locate(z) {
            Some(j) => cell_mass[j] += w,
            None => stray += w,
        }
    }
    let mass_discrepancy = stray
        + cell_mass
            .iter()
            .zip(f_prime.weights())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    let max_diameter = partition.diameters.iter().copied().fold(0.0, f64::max);
    let p = MixtureDensity::new(f.clone(), sigma)?;
    let q = MixtureDensity::new(f_prime.clone(), sigma)?;
    let r = compare(&p, &q, scheme)?;
    let rhs = max_diameter / sigma + mass_discrepancy;
    let ratio = if rhs > 0.0 {
        r.l1.value / rhs
    } else if r.l1.value <= r.l1.error + 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(PerturbationReport {
        max_diameter,
        mass_discrepancy,
        rhs,
        l1: r.l1.value,
        sup: r.sup_abs,
        ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallBallEstimate {
    pub estimate: f64,
    pub se: f64,
    pub hits: usize,
    pub n_sim: usize,
    /// Rule-of-three 95% upper bound, reported when nothing was hit.
    pub upper_95: Option<f64>,
}

/// `P(Σ|X_j − p_j| ≤ 2ε, min_j X_j ≥ ε²/2)` for `X ~ Dir(alphas)`, by simulation.
pub fn dirichlet_small_ball(alphas: &[f64], target: &[f64], eps: f64, n_sim: usize, seed: u64) -> Result<SmallBallEstimate> {
    let n = alphas.len();
    if n == 0 || target.len() != n {
        return Err(Error::usage("alphas and target must have the same positive length"));
    }
    if alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
        return Err(Error::usage("Dirichlet parameters must lie in (0, 1]"));
    }
    if target.iter().any(|&p| p < 0.0) || (target.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::usage("target must be a probability vector"));
    }
    if !(eps > 0.0 && eps < 0.25_f64.min(1.0 / n as f64)) {
        return Err(Error::usage(format!("ε must lie in (0, min(1/4, 1/N)), got {eps}")));
    }
    if n_sim == 0 {
        return Err(Error::usage("need at least one simulation"));
    }
    let gammas: Vec<Gamma<f64>> = alphas.iter().map(|&a| Gamma::new(a, 1.0).expect("positive shape")).collect();
    const CHUNK: usize = 8192;
    let hits: usize = (0..n_sim.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let mut x = vec![0.0; n];
            let mut count = 0;
            for _ in c * CHUNK..((c + 1) * CHUNK).min(n_sim) {
                for (xi, g) in x.iter_mut().zip(&gammas) {
                    *xi = g.sample(&mut rng);
                }
                let s: f64 = x.iter().sum();
                let l1: f64 = x.iter().zip(target).map(|(xi, p)| (xi / s - p).abs()).sum();
                let min = x.iter().fold(f64::INFINITY, |m, xi| m.min(xi / s));
                if l1 <= 2.0 * eps && min >= eps * eps / 2.0 {
                    count += 1;
                }
            }
            count
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let p = hits as f64 / n_sim as f64;
    Ok(SmallBallEstimate {
        estimate: p,
        se: (p * (1.0 - p) / n_sim as f64).sqrt(),
        hits,
        n_sim,
        upper_95: (hits == 0).then(|| 3.0 / n_sim as f64),
    })
}

/// Fit `log P ≈ log Ĉ − ĉ·N log(1/ε)`; returns `(ĉ, log Ĉ)`.
pub fn fit_small_ball_decay(points: &[(usize, f64, f64)]) -> (f64, f64) {
    let xs: Vec<f64> = points.iter().map(|&(n, e, _)| n as f64 * (1.0 / e).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, _, p)| p.ln()).collect();
    let fit = fit_line(&xs, &ys);
    (-fit.slope, fit.intercept)
}

/// Squared Hellinger distance between `f(·/s)/s` and its σ-smoothing on one axis.
fn axis_hellinger_sq(sm: &SmoothedCompact, axis: usize, rule: &GaussRule) -> f64 {
    let s = sm.density.scale;
    let reach = sm.scheme.reach_sigmas * sm.sigma;
    let width = sm.scheme.panel_sigmas * sm.sigma;
    composite(rule, -s - reach, s + reach, &sm.breaks[axis], width, |x| {
        let a = sm.density.axis_pdf(axis, x).sqrt();
        let b = sm.axis_pdf(axis, x).sqrt();
        (a - b) * (a - b)
    })
}

/// `h(p0, p0 * φ_σ)`, combined from per-axis affinities so no cancellation occurs.
pub fn smoothing_hellinger(p0: &CompactDensity, sigma: f64, scheme: ConvolutionScheme) -> Result<f64> {
    let sm = SmoothedCompact::new(p0.clone(), sigma, scheme)?;
    let rule = gauss_legendre(scheme.nodes_per_panel);
    let ln_affinity: f64 = (0..p0.dim())
        .map(|i| (-0.5 * axis_hellinger_sq(&sm, i, &rule)).ln_1p())
        .sum();
    Ok((-2.0 * ln_affinity.exp_m1()).max(0.0).sqrt())
}

/// Hellinger values below this are treated as quadrature noise.
pub const HELLINGER_NOISE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingReport {
    pub sigmas: Vec<f64>,
    pub hellinger: Vec<f64>,
    /// σ values dropped for falling below the noise floor.
    pub dropped: Vec<f64>,
    pub fit: LineFit,
    pub warnings: Vec<String>,
}

/// Least-squares slope of `log h(p0, p_{P0,σ})` against `log σ`.
pub fn smoothing_rate_audit(p0: &CompactDensity, sigmas: &[f64], scheme: ConvolutionScheme) -> Result<SmoothingReport> {
    if sigmas.len() < 2 || sigmas.windows(2).any(|w| !(w[1] < w[0])) || sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::usage("σ list must be positive and strictly decreasing"));
    }
    if sigmas[0] / sigmas[sigmas.len() - 1] < 10.0 - 1e-9 {
        return Err(Error::usage("σ list must span at least one decade"));
    }
    let mut warnings = Vec::new();
    if p0.factors.iter().any(|f| !f.is_c2()) {
        warnings.push("density is not twice continuously differentiable".to_string());
    } else if p0.factors.iter().any(|f| !f.score_integrals_finite()) {
        warnings.push("score integrals ∫(p′/p)⁴p and ∫(p″/p)²p diverge at the support edge".to_string());
    }
    let values: Vec<f64> = sigmas
        .par_iter()
        .map(|&s| smoothing_hellinger(p0, s, scheme))
        .collect::<Result<_>>()?;
    let mut kept_s = Vec::new();
    let mut kept_h = Vec::new();
    let mut dropped = Vec::new();
    for (&s, &h) in sigmas.iter().zip(&values) {
        if h < HELLINGER_NOISE_FLOOR {
            dropped.push(s);
        } else {
            kept_s.push(s);
            kept_h.push(h);
        }
    }
    if !dropped.is_empty() {
        warnings.push(format!("{} σ values fell below the quadrature noise floor", dropped.len()));
    }
    if kept_s.len() < 2 {
        return Err(Error::Numerical("too few σ values above the noise floor".into()));
    }
    let xs: Vec<f64> = kept_s.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = kept_h.iter().map(|h| h.ln()).collect();
    Ok(SmoothingReport {
        fit: fit_line(&xs, &ys),
        sigmas: kept_s,
        hellinger: kept_h,
        dropped,
        warnings,
    })
}

/// `n` log-spaced values from `hi` down to `lo`.
pub fn log_spaced_desc(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (hi.ln() + (lo.ln() - hi.ln()) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThicknessPartition {
    pub scheme: PartitionScheme,
    /// Ball diameter `σε^{2b}`.
    pub ball_diameter: f64,
    /// Lower bound every cell mass is held to.
    pub mass_floor: f64,
    /// `σ^{-d} (log(1/ε))^d`.
    pub count_form: f64,
}

/// Balls of diameter `σε^{2b}` around the atoms of `F_σ`, the rest of
/// `[−a, a]` cut into intervals of length at most σ, and two outer rays.
pub fn build_thickness_partition(
    f_sigma: &DiscreteMeasure,
    sigma: f64,
    eps: f64,
    a: f64,
    b: f64,
    base: &BaseMeasure,
) -> Result<ThicknessPartition> {
    if f_sigma.dim() != 1 || base.dim() != 1 {
        return Err(Error::usage("the thickness partition is implemented for d = 1 only"));
    }
    if !(sigma > 0.0 && eps > 0.0 && eps < 1.0 && a > 0.0 && b > 0.0) {
        return Err(Error::usage("need σ, a, b > 0 and ε ∈ (0, 1)"));
    }
    let diam = sigma * eps.powf(2.0 * b);
    let r = 0.5 * diam;
    let mut atoms: Vec<(f64, f64)> = f_sigma.atoms().map(|(z, w)| (z[0], w)).collect();
    atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
    if atoms.iter().any(|(z, _)| z.abs() > a) {
        return Err(Error::usage("atoms must lie in [−a, a]"));
    }
    if atoms.windows(2).any(|w| w[1].0 - w[0].0 < diam) {
        return Err(Error::usage(format!("atoms closer than the ball diameter {diam:e}")));
    }
    // (lo, hi, kind, target)
    let mut cells: Vec<(f64, f64, CellKind, f64)> = Vec::new();
    let first_lo = atoms.first().map_or(-a, |(z, _)| (z - r).min(-a));
    cells.push((f64::NEG_INFINITY, first_lo, CellKind::Outer, 0.0));
    let mut pos = first_lo;
    let fill_gap = |cells: &mut Vec<(f64, f64, CellKind, f64)>, lo: f64, hi: f64| {
        let len = hi - lo;
        if len <= 0.0 {
            return;
        }
        if len < r {
            // too thin to carry its own mass floor
            cells.last_mut().expect("outer ray comes first").1 = hi;
            return;
        }
        let pieces = (len / sigma).ceil().max(1.0) as usize;
        let step = len / pieces as f64;
        for p in 0..pieces {
            let l = lo + p as f64 * step;
            let h = if p + 1 == pieces { hi } else { lo + (p + 1) as f64 * step };
            cells.push((l, h, CellKind::Box, 0.0));
        }
    };
    for &(z, w) in &atoms {
        fill_gap(&mut cells, pos, z - r);
        cells.push((z - r, z + r, CellKind::Ball, w));
        pos = z + r;
    }
    let last_hi = pos.max(a);
    fill_gap(&mut cells, pos, last_hi);
    cells.push((last_hi, f64::INFINITY, CellKind::Outer, 0.0));

    let min_density = base.density(&[a]);
    let mass_floor = min_density * r;
    // rays thinner than the floor are absorbed by their neighbours
    let mass = |lo: f64, hi: f64| base.mass_of_interval(lo, hi);
    if cells.len() > 2 && mass(cells[0].0, cells[0].1) < mass_floor {
        let ray = cells.remove(0);
        cells[0].0 = ray.0;
    }
    let n = cells.len();
    if n > 2 && mass(cells[n - 1].0, cells[n - 1].1) < mass_floor {
        let ray = cells.pop().expect("nonempty");
        cells.last_mut().expect("nonempty").1 = ray.1;
    }
    let targets = cells.iter().map(|c| c.3).collect();
    let kinds = cells.iter().map(|c| c.2).collect();
    let cells: Vec<Cell> = cells
        .iter()
        .map(|c| Cell {
            lo: vec![c.0],
            hi: vec![c.1],
        })
        .collect();
    Ok(ThicknessPartition {
        scheme: PartitionScheme::from_cells(cells, kinds, targets, base),
        ball_diameter: diam,
        mass_floor,
        count_form: (1.0 / eps).ln() / sigma,
    })
}

/// The two σ windows of the thickness arguments, as `(lo, hi)` intervals of σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaWindows {
    /// `σ² ∈ ε̃ log(1/ε̃)^{-2}·(lo, hi)`.
    pub variance: (f64, f64),
    /// `σ ∈ σ₀(1 − w·ε̃ log(1/ε̃)^{-2}, 1)`.
    pub relative: (f64, f64),
}

pub fn sigma_windows(eps_tilde: f64, sigma0: f64, cfg: &crate::config::ApproxConfig) -> Result<SigmaWindows> {
    cfg.validate()?;
    if !(eps_tilde > 0.0 && eps_tilde < 1.0 && sigma0 > 0.0) {
        return Err(Error::usage("need ε̃ ∈ (0, 1) and σ₀ > 0"));
    }
    let r = eps_tilde / (1.0 / eps_tilde).ln().powi(2);
    let [lo, hi] = cfg.variance_window;
    Ok(SigmaWindows {
        variance: ((lo * r).sqrt(), (hi * r).sqrt()),
        relative: (sigma0 * (1.0 - cfg.relative_window * r).max(0.0), sigma0),
    })
}
