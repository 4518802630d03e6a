//! Discrete mixing measures and isotropic Gaussian location mixtures.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numeric::{clamped_exp, normal_cdf};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tolerance on the total weight of a measure flagged as normalized.
pub const NORMALIZED_TOL: f64 = 1e-12;

/// A location in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::usage("a point needs at least one coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::usage("point coordinates must be finite"));
        }
        Ok(Point { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

impl std::ops::Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.coords
    }
}

/// Finite list of weighted atoms. Weights need not sum to one: whatever is
/// missing is the truncation deficit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    /// Atom locations, row-major `len × dim`.
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Build from row-major locations. Total weight may be below one.
    pub fn from_flat(dim: usize, locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("dimension must be at least 1"));
        }
        if locations.len() != dim * weights.len() {
            return Err(Error::usage(format!(
                "{} location coordinates do not match {} atoms in dimension {dim}",
                locations.len(),
                weights.len()
            )));
        }
        if locations.iter().any(|c| !c.is_finite()) {
            return Err(Error::usage("atom locations must be finite"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::usage("atom weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + NORMALIZED_TOL {
            return Err(Error::usage(format!("total weight {total} exceeds 1")));
        }
        Ok(DiscreteMeasure {
            dim,
            locations,
            weights,
        })
    }

    pub fn new(atoms: Vec<(Point, f64)>) -> Result<Self> {
        let dim = atoms
            .first()
            .map(|(p, _)| p.dim())
            .ok_or_else(|| Error::usage("cannot infer dimension of an empty atom list"))?;
        let mut locations = Vec::with_capacity(atoms.len() * dim);
        let mut weights = Vec::with_capacity(atoms.len());
        for (p, w) in atoms {
            if p.dim() != dim {
                return Err(Error::usage("atoms have mixed dimensions"));
            }
            locations.extend_from_slice(&p);
            weights.push(w);
        }
        Self::from_flat(dim, locations, weights)
    }

    /// Unit mass at `z`.
    pub fn dirac(z: &[f64]) -> Result<Self> {
        Self::from_flat(z.len(), z.to_vec(), vec![1.0])
    }

    pub fn empty(dim: usize) -> Self {
        DiscreteMeasure {
            dim,
            locations: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn location(&self, h: usize) -> &[f64] {
        &self.locations[h * self.dim..(h + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.locations
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `1 − Σ weights`, clamped at zero against rounding.
    pub fn deficit(&self) -> f64 {
        (1.0 - self.total_mass()).max(0.0)
    }

    pub fn is_normalized(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= NORMALIZED_TOL
    }

    /// Rescale the weights to sum to one.
    pub fn normalized(&self) -> Result<Self> {
        let total = self.total_mass();
        if !(total > 0.0) {
            return Err(Error::usage("cannot normalize a measure with zero mass"));
        }
        Ok(DiscreteMeasure {
            dim: self.dim,
            locations: self.locations.clone(),
            weights: self.weights.iter().map(|w| w / total).collect(),
        })
    }

    /// Merge atoms at bitwise-identical locations, keeping first-occurrence order.
    pub fn merged(&self) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut locations = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (z, w) in self.atoms() {
            // -0.0 and 0.0 are the same location
            let key: Vec<u64> = z.iter().map(|c| (c + 0.0).to_bits()).collect();
            match index.get(&key) {
                Some(&i) => weights[i] += w,
                None => {
                    index.insert(key, weights.len());
                    locations.extend_from_slice(z);
                    weights.push(w);
                }
            }
        }
        DiscreteMeasure {
            dim: self.dim,
            locations,
            weights,
        }
    }

    /// First `h` atoms (all of them when `h ≥ len`).
    pub fn truncated(&self, h: usize) -> Self {
        let h = h.min(self.len());
        DiscreteMeasure {
            dim: self.dim,
            locations: self.locations[..h * self.dim].to_vec(),
            weights: self.weights[..h].to_vec(),
        }
    }

    /// Total weight of atoms inside the closed box `[lo, hi]` (per axis).
    pub fn mass_in_box(&self, lo: &[f64], hi: &[f64]) -> f64 {
        self.atoms()
            .filter(|(z, _)| z.iter().zip(lo.iter().zip(hi)).all(|(c, (l, u))| c >= l && c <= u))
            .map(|(_, w)| w)
            .sum()
    }

    /// Per-axis `(min, max)` of atom locations.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return None;
        }
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for (z, _) in self.atoms() {
            for i in 0..self.dim {
                lo[i] = lo[i].min(z[i]);
                hi[i] = hi[i].max(z[i]);
            }
        }
        Some((lo, hi))
    }

    /// Write the `d H` header and one `weight z_1 … z_d` line per atom.
    pub fn write_record<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{} {}", self.dim, self.len())?;
        for (z, w) in self.atoms() {
            write!(out, "{w:.16e}")?;
            for c in z {
                write!(out, " {c:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Read one record written by [`write_record`](Self::write_record).
    pub fn read_record<R: BufRead>(input: &mut R) -> Result<Option<Self>> {
        let Some(header) = next_nonempty_line(input)? else {
            return Ok(None);
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [d, h] = fields.as_slice() else {
            return Err(Error::Parse(format!("bad measure header {header:?}")));
        };
        let dim: usize = parse_num(d)?;
        let len: usize = parse_num(h)?;
        let mut locations = Vec::with_capacity(dim * len);
        let mut weights = Vec::with_capacity(len);
        for _ in 0..len {
            let line = next_nonempty_line(input)?
                .ok_or_else(|| Error::Parse("record ends before all atoms were read".into()))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(parse_num)
                .collect::<Result<_>>()?;
            if vals.len() != dim + 1 {
                return Err(Error::Parse(format!("atom line {line:?} needs {} fields", dim + 1)));
            }
            weights.push(vals[0]);
            locations.extend_from_slice(&vals[1..]);
        }
        Self::from_flat(dim, locations, weights)
            .map(Some)
            .map_err(|e| Error::Parse(e.to_string()))
    }
}

fn next_nonempty_line<R: BufRead>(input: &mut R) -> Result<Option<String>> {
    loop {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        let t = line.trim();
        if !t.is_empty() {
            return Ok(Some(t.to_string()));
        }
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("cannot parse number {s:?}")))
}

/// `1 − Σ weights` of a (possibly truncated) measure.
pub fn truncation_deficit(m: &DiscreteMeasure) -> f64 {
    m.deficit()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicGaussianKernel {
    sigma: f64,
    dim: usize,
    ln_norm: f64,
}

impl IsotropicGaussianKernel {
    pub fn new(sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::usage(format!("kernel bandwidth must be positive, got {sigma}")));
        }
        if dim == 0 {
            return Err(Error::usage("dimension must be at least 1"));
        }
        Ok(IsotropicGaussianKernel {
            sigma,
            dim,
            ln_norm: -0.5 * dim as f64 * (LN_2PI + 2.0 * sigma.ln()),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Log density of `N(z, σ²I)` at `x`; no dimension check.
    #[inline]
    pub fn ln_eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        self.ln_norm - sq / (2.0 * self.sigma * self.sigma)
    }

    pub fn ln_eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        if x.len() != self.dim || z.len() != self.dim {
            return Err(Error::usage(format!(
                "kernel of dimension {} evaluated at points of dimension {} and {}",
                self.dim,
                x.len(),
                z.len()
            )));
        }
        Ok(self.ln_eval_unchecked(x, z))
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.ln_eval(x, z).map(clamped_exp)
    }
}

/// `(2πσ²)^{-d/2} exp(−‖x−z‖²/(2σ²))`.
pub fn kernel_eval(kernel: &IsotropicGaussianKernel, x: &Point, z: &Point) -> Result<f64> {
    kernel.eval(x, z)
}

/// The location mixture `p_{F,σ}(x) = Σ_h π_h φ_σ(x − z_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDensity {
    mixing: DiscreteMeasure,
    kernel: IsotropicGaussianKernel,
    ln_weights: Vec<f64>,
}

impl MixtureDensity {
    pub fn new(mixing: DiscreteMeasure, sigma: f64) -> Result<Self> {
        if mixing.is_empty() {
            return Err(Error::usage("mixture needs at least one atom"));
        }
        let kernel = IsotropicGaussianKernel::new(sigma, mixing.dim())?;
        let ln_weights = mixing.weights().iter().map(|w| w.ln()).collect();
        Ok(MixtureDensity {
            mixing,
            kernel,
            ln_weights,
        })
    }

    pub fn mixing(&self) -> &DiscreteMeasure {
        &self.mixing
    }

    pub fn sigma(&self) -> f64 {
        self.kernel.sigma()
    }

    pub fn dim(&self) -> usize {
        self.mixing.dim()
    }

    pub fn kernel(&self) -> &IsotropicGaussianKernel {
        &self.kernel
    }

    pub fn deficit(&self) -> f64 {
        self.mixing.deficit()
    }

    /// Density at `x`. Panics in debug builds on a dimension mismatch.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        self.mixing
            .atoms()
            .map(|(z, w)| w * clamped_exp(self.kernel.ln_eval_unchecked(x, z)))
            .sum()
    }

    /// Log density at `x`, computed by log-sum-exp so it stays finite far in the tails.
    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let d = self.dim();
        let term = |h: usize| {
            self.ln_weights[h] + self.kernel.ln_eval_unchecked(x, &self.mixing.locations[h * d..(h + 1) * d])
        };
        let m = (0..self.mixing.len()).map(term).fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + (0..self.mixing.len())
            .map(|h| (term(h) - m).exp())
            .sum::<f64>()
            .ln()
    }

    pub fn try_pdf(&self, x: &Point) -> Result<f64> {
        if x.dim() != self.dim() {
            return Err(Error::usage("point dimension does not match the mixture"));
        }
        Ok(self.pdf(x))
    }

    /// CDF of a one-dimensional mixture (deficit mass is ignored).
    pub fn cdf_1d(&self, x: f64) -> f64 {
        assert_eq!(self.dim(), 1, "cdf_1d needs a one-dimensional mixture");
        let s = self.sigma();
        self.mixing
            .atoms()
            .map(|(z, w)| w * normal_cdf((x - z[0]) / s))
            .sum()
    }

    /// `n` i.i.d. draws: an atom with probability `π_h`, plus `N(0, σ²I)` noise.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Point>> {
        Ok(self
            .sample_flat(n, rng)?
            .chunks_exact(self.dim())
            .map(|c| Point { coords: c.to_vec() })
            .collect())
    }

    /// As [`sample`](Self::sample), returned row-major.
    pub fn sample_flat<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        if !self.mixing.is_normalized() {
            return Err(Error::usage(format!(
                "sampling needs a normalized mixing measure (deficit {})",
                self.deficit()
            )));
        }
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        if n == 0 {
            return Ok(out);
        }
        let pick = WeightedIndex::new(self.mixing.weights())
            .map_err(|e| Error::usage(format!("invalid weights: {e}")))?;
        for _ in 0..n {
            let h = pick.sample(rng);
            for &c in self.mixing.location(h) {
                let eps: f64 = StandardNormal.sample(rng);
                out.push(c + self.sigma() * eps);
            }
        }
        Ok(out)
    }

    /// Mixing record followed by a `sigma <value>` line.
    pub fn write_record<W: Write>(&self, out: &mut W) -> Result<()> {
        self.mixing.write_record(out)?;
        writeln!(out, "sigma {:.16e}", self.sigma())?;
        Ok(())
    }

    pub fn read_record<R: BufRead>(input: &mut R) -> Result<Option<Self>> {
        let Some(mixing) = DiscreteMeasure::read_record(input)? else {
            return Ok(None);
        };
        let line = next_nonempty_line(input)?
            .ok_or_else(|| Error::Parse("missing sigma line".into()))?;
        let sigma = match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["sigma", v] => parse_num::<f64>(v)?,
            _ => return Err(Error::Parse(format!("expected `sigma <value>`, got {line:?}"))),
        };
        MixtureDensity::new(mixing, sigma)
            .map(Some)
            .map_err(|e| Error::Parse(e.to_string()))
    }

    /// Read every record in a stream.
    pub fn read_all<R: BufRead>(input: &mut R) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        while let Some(m) = Self::read_record(input)? {
            out.push(m);
        }
        Ok(out)
    }
}

pub fn mixture_pdf(mix: &MixtureDensity, x: &Point) -> Result<f64> {
    mix.try_pdf(x)
}
