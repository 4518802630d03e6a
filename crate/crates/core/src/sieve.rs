//! The stick-breaking sieve
//!
//! `Q = {p_{F,σ}: z_h ∈ [−a,a]^d for h ≤ H, Σ_{h>H} π_h < ε, 1 < σ/σ̲ < (1+ε)^M}`,
//! its ε-nets, projections onto them, prior complement mass and the sieve
//! schedules used for the two contraction regimes.
//!
//! Nets are lazy: they know their size and can find the nearest point of any
//! input without being materialized. The `build_*` functions materialize them
//! and refuse beyond [`MAX_NET_SIZE`] points.

use rayon::prelude::*;

use crate::density::{DiscreteMeasure, MixtureDensity, Point};
use crate::metrics::{l1_distance, QuadratureScheme};
use crate::numeric::{binomial, ln_binomial};
use crate::prior::{draw_sigma, draw_stick_breaking, stick_tail_prob, stick_tail_stirling_bound, DPPrior};
use crate::rng::stream;
use crate::{Error, Result};

pub const MAX_NET_SIZE: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SieveSpec {
    pub eps: f64,
    pub box_half_width: f64,
    pub sigma_floor: f64,
    pub sigma_steps: u64,
    pub active_atoms: usize,
    pub dim: usize,
}

impl SieveSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.eps) || !pos(self.box_half_width) || !pos(self.sigma_floor) {
            return Err(Error::usage("ε, a and σ̲ must be positive and finite"));
        }
        if self.sigma_steps == 0 || self.active_atoms == 0 || self.dim == 0 {
            return Err(Error::usage("M, H and d must be at least 1"));
        }
        if !self.ln_sigma_ceiling().is_finite() {
            return Err(Error::usage("log σ ceiling is not finite"));
        }
        Ok(())
    }

    /// `ln(σ̲(1+ε)^M)`, kept in log space since `(1+ε)^M` overflows for schedule-sized `M`.
    pub fn ln_sigma_ceiling(&self) -> f64 {
        self.sigma_floor.ln() + self.sigma_steps as f64 * self.eps.ln_1p()
    }

    /// Radius `σ̲ε` of the location net.
    pub fn location_radius(&self) -> f64 {
        self.sigma_floor * self.eps
    }
}

/// Cell-centre grid covering `[−a, a]^d` within a Euclidean radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationNet {
    pub a: f64,
    pub radius: f64,
    pub dim: usize,
    /// Points per axis.
    pub per_axis: u64,
    pub step: f64,
}

impl LocationNet {
    pub fn new(a: f64, radius: f64, dim: usize) -> Result<Self> {
        if !(a > 0.0 && radius > 0.0 && a.is_finite() && radius.is_finite()) || dim == 0 {
            return Err(Error::usage("location net needs a, radius > 0 and d ≥ 1"));
        }
        let per_axis = (a * (dim as f64).sqrt() / radius).ceil();
        if per_axis >= 2f64.powi(62) {
            return Err(Error::Resource(format!("{per_axis} points per axis")));
        }
        let per_axis = (per_axis as u64).max(1);
        Ok(LocationNet {
            a,
            radius,
            dim,
            per_axis,
            step: 2.0 * a / per_axis as f64,
        })
    }

    pub fn ln_len(&self) -> f64 {
        self.dim as f64 * (self.per_axis as f64).ln()
    }

    pub fn len(&self) -> Option<u128> {
        u128::from(self.per_axis).checked_pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn axis_value(&self, i: u64) -> f64 {
        -self.a + (i as f64 + 0.5) * self.step
    }

    /// Nearest point per axis; ties go to the lower index.
    pub fn nearest(&self, x: &[f64]) -> Vec<u64> {
        x.iter()
            .map(|&c| {
                let t = (c + self.a) / self.step;
                let i = (t - 1.0).ceil();
                i.clamp(0.0, (self.per_axis - 1) as f64) as u64
            })
            .collect()
    }

    pub fn point(&self, index: &[u64]) -> Vec<f64> {
        index.iter().map(|&i| self.axis_value(i)).collect()
    }

    /// Lexicographic rank of a multi-index.
    pub fn rank(&self, index: &[u64]) -> u128 {
        index
            .iter()
            .fold(0u128, |acc, &i| acc * u128::from(self.per_axis) + u128::from(i))
    }

    pub fn unrank(&self, mut rank: u128) -> Vec<u64> {
        let k = u128::from(self.per_axis);
        let mut idx = vec![0u64; self.dim];
        for slot in idx.iter_mut().rev() {
            *slot = (rank % k) as u64;
            rank /= k;
        }
        idx
    }
}

pub fn build_location_net(a: f64, radius: f64, d: usize) -> Result<Vec<Point>> {
    let net = LocationNet::new(a, radius, d)?;
    let len = net.len().filter(|&n| n <= MAX_NET_SIZE).ok_or_else(|| {
        Error::Resource(format!(
            "location net has {}^{} points, above {MAX_NET_SIZE}",
            net.per_axis, d
        ))
    })?;
    (0..len)
        .map(|r| Point::new(net.point(&net.unrank(r))))
        .collect()
}

/// Compositions of `k = ⌈H/ε⌉` into `H` parts, scaled by `1/k`, in lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexNet {
    pub h: usize,
    pub k: u64,
}

impl SimplexNet {
    pub fn new(h: usize, eps: f64) -> Result<Self> {
        if h == 0 {
            return Err(Error::usage("H must be at least 1"));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::usage(format!("ε must lie in (0, 1), got {eps}")));
        }
        let k = (h as f64 / eps).ceil();
        if k >= 2f64.powi(62) {
            return Err(Error::Resource(format!("composition total {k} too large")));
        }
        Ok(SimplexNet { h, k: k as u64 })
    }

    pub fn len(&self) -> Option<u128> {
        binomial(self.k + self.h as u64 - 1, self.h as u64 - 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ln_len(&self) -> f64 {
        match self.len() {
            Some(n) => (n as f64).ln(),
            None => ln_binomial((self.k + self.h as u64 - 1) as f64, (self.h - 1) as f64),
        }
    }

    /// Largest-remainder rounding of `w` (a point of the simplex) to the lattice.
    /// Equal remainders give the extra unit to the later coordinate, which keeps
    /// the lexicographic rank of the result lowest.
    pub fn nearest(&self, w: &[f64]) -> Vec<u64> {
        assert_eq!(w.len(), self.h);
        let total: f64 = w.iter().sum();
        let k = self.k as f64;
        let scaled: Vec<f64> = w.iter().map(|v| v.max(0.0) / total * k).collect();
        let mut parts: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
        let assigned: u64 = parts.iter().sum();
        let mut order: Vec<usize> = (0..self.h).collect();
        order.sort_by(|&i, &j| {
            let (ri, rj) = (scaled[i] - scaled[i].floor(), scaled[j] - scaled[j].floor());
            rj.total_cmp(&ri).then(j.cmp(&i))
        });
        let mut missing = self.k.saturating_sub(assigned);
        for &i in order.iter().cycle() {
            if missing == 0 {
                break;
            }
            parts[i] += 1;
            missing -= 1;
        }
        // rounding in the scaled floors can overshoot by a unit
        let mut excess = parts.iter().sum::<u64>().saturating_sub(self.k);
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if parts[i] > 0 {
                parts[i] -= 1;
                excess -= 1;
            }
        }
        parts
    }

    pub fn weights(&self, parts: &[u64]) -> Vec<f64> {
        parts.iter().map(|&c| c as f64 / self.k as f64).collect()
    }

    /// Number of compositions lexicographically before `parts`.
    pub fn rank(&self, parts: &[u64]) -> Option<u128> {
        let mut rest = self.k;
        let mut rank: u128 = 0;
        for (i, &c) in parts.iter().enumerate().take(self.h - 1) {
            let slots = (self.h - i - 1) as u64;
            for j in 0..c {
                rank = rank.checked_add(binomial(rest - j + slots - 1, slots - 1)?)?;
            }
            rest -= c;
        }
        Some(rank)
    }

    pub fn unrank(&self, mut rank: u128) -> Option<Vec<u64>> {
        let mut rest = self.k;
        let mut parts = Vec::with_capacity(self.h);
        for i in 0..self.h - 1 {
            let slots = (self.h - i - 1) as u64;
            let mut c = 0;
            loop {
                let block = binomial(rest - c + slots - 1, slots - 1)?;
                if rank < block {
                    break;
                }
                rank -= block;
                c += 1;
            }
            parts.push(c);
            rest -= c;
        }
        parts.push(rest);
        Some(parts)
    }
}

pub fn build_simplex_net(h: usize, eps: f64) -> Result<Vec<Vec<f64>>> {
    let net = SimplexNet::new(h, eps)?;
    let len = net.len().filter(|&n| n <= MAX_NET_SIZE).ok_or_else(|| {
        Error::Resource(format!("simplex net for H = {h}, ε = {eps} exceeds {MAX_NET_SIZE} points"))
    })?;
    // walk compositions in lexicographic order without unranking each one
    let mut out = Vec::with_capacity(len as usize);
    let mut parts = vec![0u64; h];
    parts[h - 1] = net.k;
    loop {
        out.push(net.weights(&parts));
        // next composition: find the rightmost position before the last that can grow
        let Some(i) = (0..h - 1).rev().find(|&i| parts[i + 1..].iter().sum::<u64>() > 0) else {
            break;
        };
        parts[i] += 1;
        let rest = net.k - parts[..=i].iter().sum::<u64>();
        for p in parts[i + 1..].iter_mut() {
            *p = 0;
        }
        parts[h - 1] = rest;
    }
    Ok(out)
}

/// `σ̲(1+ε)^m`, `m = 1..M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaGrid {
    pub floor: f64,
    pub eps: f64,
    pub steps: u64,
}

impl SigmaGrid {
    pub fn value(&self, m: u64) -> f64 {
        (self.floor.ln() + m as f64 * self.eps.ln_1p()).exp()
    }

    /// Smallest `m ∈ 1..=M` with `σ̲(1+ε)^m ≥ σ`, so `1 ≤ σ*/σ < 1+ε`.
    pub fn bracket(&self, sigma: f64) -> Option<u64> {
        if !(sigma > self.floor) {
            return None;
        }
        let step = self.eps.ln_1p();
        let mut m = (((sigma / self.floor).ln() / step).ceil() as u64).max(1);
        while m > 1 && self.value(m - 1) >= sigma {
            m -= 1;
        }
        while self.value(m) < sigma {
            m += 1;
        }
        (m <= self.steps).then_some(m)
    }
}

pub fn build_sigma_grid(spec: &SieveSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if u128::from(spec.sigma_steps) > MAX_NET_SIZE {
        return Err(Error::Resource(format!("σ grid of {} values", spec.sigma_steps)));
    }
    let grid = SigmaGrid {
        floor: spec.sigma_floor,
        eps: spec.eps,
        steps: spec.sigma_steps,
    };
    let values: Vec<f64> = (1..=spec.sigma_steps).map(|m| grid.value(m)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("σ grid overflows double precision".into()));
    }
    Ok(values)
}

/// The three nets of a sieve spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SieveNet {
    pub spec: SieveSpec,
    pub location: LocationNet,
    pub simplex: SimplexNet,
    pub sigma: SigmaGrid,
}

impl SieveNet {
    pub fn new(spec: SieveSpec) -> Result<Self> {
        spec.validate()?;
        let simplex_eps = spec.eps.min(1.0 - f64::EPSILON);
        Ok(SieveNet {
            spec,
            location: LocationNet::new(spec.box_half_width, spec.location_radius(), spec.dim)?,
            simplex: SimplexNet::new(spec.active_atoms, simplex_eps)?,
            sigma: SigmaGrid {
                floor: spec.sigma_floor,
                eps: spec.eps,
                steps: spec.sigma_steps,
            },
        })
    }

    /// `log(|R*|^H · |S*| · M)`.
    pub fn ln_size(&self) -> f64 {
        self.spec.active_atoms as f64 * self.location.ln_len()
            + self.simplex.ln_len()
            + (self.spec.sigma_steps as f64).ln()
    }

    pub fn size(&self) -> Option<u128> {
        self.location
            .len()?
            .checked_pow(self.spec.active_atoms as u32)?
            .checked_mul(self.simplex.len()?)?
            .checked_mul(u128::from(self.spec.sigma_steps))
    }

    pub fn realize(&self, point: &NetPoint) -> Result<MixtureDensity> {
        let d = self.spec.dim;
        let mut locs = Vec::with_capacity(self.spec.active_atoms * d);
        for idx in point.atom_indices.chunks_exact(d) {
            locs.extend(self.location.point(idx));
        }
        let weights = self.simplex.weights(&point.weight_parts);
        let measure = DiscreteMeasure::from_flat(d, locs, weights)?;
        MixtureDensity::new(measure, self.sigma.value(point.sigma_index))
    }

    /// Every net point, in rank order. Refuses nets above `limit` points.
    pub fn enumerate(&self, limit: u128) -> Result<Vec<NetPoint>> {
        let size = self.size().filter(|&s| s <= limit).ok_or_else(|| {
            Error::Resource(format!("net has more than {limit} points"))
        })?;
        let h = self.spec.active_atoms;
        let nloc = self.location.len().expect("bounded above");
        let nsimp = self.simplex.len().expect("bounded above");
        let mut out = Vec::with_capacity(size as usize);
        for m in 1..=self.spec.sigma_steps {
            for s in 0..nsimp {
                let parts = self.simplex.unrank(s).expect("rank within range");
                for mut r in 0..nloc.pow(h as u32) {
                    let mut atom_indices = Vec::with_capacity(h * self.spec.dim);
                    let mut ranks = vec![0u128; h];
                    for slot in ranks.iter_mut().rev() {
                        *slot = r % nloc;
                        r /= nloc;
                    }
                    for lr in ranks {
                        atom_indices.extend(self.location.unrank(lr));
                    }
                    out.push(NetPoint {
                        atom_indices,
                        weight_parts: parts.clone(),
                        sigma_index: m,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// A point of the `5ε`-net, by indices into the three nets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetPoint {
    /// Per-axis location-net indices, `H × d` row-major.
    pub atom_indices: Vec<u64>,
    /// Composition parts of the weight vector (sum `k`).
    pub weight_parts: Vec<u64>,
    /// `m` with `σ* = σ̲(1+ε)^m`.
    pub sigma_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NonMember {
    SigmaOutOfRange { sigma: f64 },
    AtomOutsideBox { atom: usize },
    TailTooHeavy { tail: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    Member,
    Outside(NonMember),
    /// Fewer than `H` atoms are carried and the unassigned deficit could sit either side of `H`.
    Indeterminate,
}

impl Membership {
    pub fn is_member(&self) -> bool {
        matches!(self, Membership::Member)
    }
}

/// Membership of a density with stick-ordered atoms in `Q` (strict inequalities).
pub fn sieve_membership(p: &MixtureDensity, spec: &SieveSpec) -> Result<Membership> {
    spec.validate()?;
    if p.dim() != spec.dim {
        return Err(Error::usage("density and sieve have different dimensions"));
    }
    let sigma = p.sigma();
    if !(sigma > spec.sigma_floor && sigma.ln() < spec.ln_sigma_ceiling()) {
        return Ok(Membership::Outside(NonMember::SigmaOutOfRange { sigma }));
    }
    let a = spec.box_half_width;
    let mixing = p.mixing();
    let h = spec.active_atoms;
    for i in 0..h.min(mixing.len()) {
        if mixing.location(i).iter().any(|c| c.abs() > a) {
            return Ok(Membership::Outside(NonMember::AtomOutsideBox { atom: i }));
        }
    }
    if mixing.len() < h && mixing.deficit() > 0.0 {
        return Ok(Membership::Indeterminate);
    }
    let head: f64 = mixing.weights().iter().take(h).sum();
    let tail = (1.0 - head).max(0.0);
    if tail < spec.eps {
        Ok(Membership::Member)
    } else {
        Ok(Membership::Outside(NonMember::TailTooHeavy { tail }))
    }
}

/// L1 pieces of the chain `p → σ* → first H renormalized → z* → π*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionTerms {
    pub sigma_term: f64,
    pub tail_term: f64,
    pub location_term: f64,
    pub weight_term: f64,
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub point: NetPoint,
    pub density: MixtureDensity,
    /// Measured `‖p − p*‖₁` over the carried atoms.
    pub measured_l1: f64,
    /// Measured distance plus quadrature error plus the carried deficit.
    pub certified_l1: f64,
    pub terms: ProjectionTerms,
}

/// Project a member of `Q` onto the net and certify `‖p − p*‖₁ ≤ 5ε`.
pub fn project_to_net(p: &MixtureDensity, net: &SieveNet, scheme: &QuadratureScheme) -> Result<Projection> {
    let spec = &net.spec;
    match sieve_membership(p, spec)? {
        Membership::Member => {}
        other => return Err(Error::usage(format!("density is not a sieve member: {other:?}"))),
    }
    let d = spec.dim;
    let h = spec.active_atoms;
    let mixing = p.mixing();
    let carried = h.min(mixing.len());

    let mut head_locs = mixing.locations()[..carried * d].to_vec();
    let mut head_w = mixing.weights()[..carried].to_vec();
    // atoms that were never drawn carry no weight; park them at the origin
    head_locs.resize(h * d, 0.0);
    head_w.resize(h, 0.0);
    let head_mass: f64 = head_w.iter().sum();
    let renorm: Vec<f64> = head_w.iter().map(|w| w / head_mass).collect();

    let mut atom_indices = Vec::with_capacity(h * d);
    for z in head_locs.chunks_exact(d) {
        atom_indices.extend(net.location.nearest(z));
    }
    let weight_parts = net.simplex.nearest(&renorm);
    let sigma_index = net
        .sigma
        .bracket(p.sigma())
        .ok_or_else(|| Error::Invariant("member σ has no bracketing grid value".into()))?;
    let point = NetPoint {
        atom_indices,
        weight_parts,
        sigma_index,
    };
    let star = net.realize(&point)?;
    let sigma_star = star.sigma();

    let l1 = |x: &MixtureDensity, y: &MixtureDensity| -> Result<(f64, f64)> {
        let e = l1_distance(x, y, scheme)?;
        Ok((e.value, e.error))
    };
    let (measured, qerr) = l1(p, &star)?;
    let certified = measured + qerr + mixing.deficit();

    let at_star = MixtureDensity::new(mixing.clone(), sigma_star)?;
    let renormed = MixtureDensity::new(DiscreteMeasure::from_flat(d, head_locs, renorm.clone())?, sigma_star)?;
    let star_locs = star.mixing().locations().to_vec();
    let moved = MixtureDensity::new(DiscreteMeasure::from_flat(d, star_locs, renorm)?, sigma_star)?;
    let terms = ProjectionTerms {
        sigma_term: l1(p, &at_star)?.0,
        tail_term: l1(&at_star, &renormed)?.0 + mixing.deficit(),
        location_term: l1(&renormed, &moved)?.0,
        weight_term: l1(&moved, &star)?.0,
    };
    if certified > 5.0 * spec.eps {
        return Err(Error::Invariant(format!(
            "projection certificate {certified} exceeds 5ε = {}",
            5.0 * spec.eps
        )));
    }
    Ok(Projection {
        point,
        density: star,
        measured_l1: measured,
        certified_l1: certified,
        terms,
    })
}

/// `dH log(a/(σ̲ε)) + H log(1/ε) + log M`.
pub fn log_covering_bound(spec: &SieveSpec) -> f64 {
    let h = spec.active_atoms as f64;
    spec.dim as f64 * h * (spec.box_half_width / (spec.sigma_floor * spec.eps)).ln()
        + h * (1.0 / spec.eps).ln()
        + (spec.sigma_steps as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplementMassReport {
    pub mc_estimate: f64,
    pub se: f64,
    pub n_sim: usize,
    /// `H·ᾱ(ℝ^d \ [−a,a]^d)`.
    pub box_term: f64,
    /// `P(σ ≤ σ̲)`.
    pub sigma_low_term: f64,
    /// `P(σ ≥ σ̲(1+ε)^M)`.
    pub sigma_high_term: f64,
    /// `P(Σ_{h>H} π_h > ε)`.
    pub tail_term: f64,
    /// `H·2d·exp(−a²/(2τ²))`, the Gaussian-tail envelope of the box term.
    pub box_envelope: f64,
    /// `(e|α| log(1/ε)/H)^H`.
    pub tail_stirling: f64,
}

impl ComplementMassReport {
    /// The union bound.
    pub fn bound_sum(&self) -> f64 {
        self.box_term + self.sigma_low_term + self.sigma_high_term + self.tail_term
    }

    /// Largest of the three union-bound events (σ below and above counted together).
    pub fn largest_term(&self) -> f64 {
        self.box_term
            .max(self.sigma_low_term + self.sigma_high_term)
            .max(self.tail_term)
    }
}

const MC_CHUNK: usize = 1024;

/// Monte Carlo `Π(Q^c)` alongside the exactly computable union-bound terms.
pub fn prior_complement_mass(spec: &SieveSpec, prior: &DPPrior, n_sim: usize, seed: u64) -> Result<ComplementMassReport> {
    spec.validate()?;
    if prior.dim() != spec.dim {
        return Err(Error::usage("prior and sieve have different dimensions"));
    }
    if n_sim < 1000 {
        return Err(Error::usage("complement mass needs at least 1000 simulations"));
    }
    let h = spec.active_atoms;
    let a = spec.box_half_width;
    let ln_hi = spec.ln_sigma_ceiling();
    let chunks = n_sim.div_ceil(MC_CHUNK);
    let hits: Vec<usize> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<usize> {
            let mut rng = stream(seed, c as u64);
            let mut count = 0;
            for _ in c * MC_CHUNK..((c + 1) * MC_CHUNK).min(n_sim) {
                let draw = draw_stick_breaking(prior, h, &mut rng)?;
                let sigma = draw_sigma(prior, &mut rng);
                let outside = draw.atoms.iter().any(|z| z.abs() > a);
                let heavy = draw.tail_deficit >= spec.eps;
                let off = !(sigma > spec.sigma_floor && sigma.ln() < ln_hi);
                if outside || heavy || off {
                    count += 1;
                }
            }
            Ok(count)
        })
        .collect::<Result<_>>()?;
    let p_hat = hits.iter().sum::<usize>() as f64 / n_sim as f64;
    let se = (p_hat * (1.0 - p_hat) / n_sim as f64).sqrt();
    let d = spec.dim as f64;
    let bw = &prior.bandwidth;
    let below = crate::numeric::gamma_sf(bw.shape(), bw.rate(), (-d * spec.sigma_floor.ln()).exp());
    let above = crate::numeric::gamma_cdf(bw.shape(), bw.rate(), (-d * ln_hi).exp());
    let eps_tail = spec.eps.min(1.0 - f64::EPSILON);
    Ok(ComplementMassReport {
        mc_estimate: p_hat,
        se,
        n_sim,
        box_term: h as f64 * prior.base.mass_of_box(a).outside,
        sigma_low_term: below,
        sigma_high_term: above,
        tail_term: stick_tail_prob(h, eps_tail, prior.alpha_mass())?,
        box_envelope: h as f64 * prior.base.tail_envelope(a),
        tail_stirling: stick_tail_stirling_bound(h, eps_tail, prior.alpha_mass())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub spec: SieveSpec,
    pub eps_tilde: f64,
    pub eps_bar: f64,
}

fn schedule_common(n: u64, d: usize, eps_bar: f64, eps_tilde: f64, h: f64) -> Result<Schedule> {
    let nf = n as f64;
    if !h.is_finite() || h >= usize::MAX as f64 {
        return Err(Error::Resource(format!("schedule asks for H = {h}")));
    }
    let spec = SieveSpec {
        eps: eps_bar,
        box_half_width: nf.sqrt(),
        sigma_floor: nf.powf(-1.0 / d as f64),
        sigma_steps: n,
        active_atoms: (h.ceil() as usize).max(1),
        dim: d,
    };
    Ok(Schedule {
        spec,
        eps_tilde,
        eps_bar,
    })
}

/// Sieve for a super-smooth truth: `ε̄ = n^{-1/2}(log n)^{(d+1+s)/2}`, `H = (log n)^{d+s}`,
/// `M = a² = σ̲^{-d} = n`.
pub fn schedule_supersmooth(n: u64, s: f64, d: usize) -> Result<Schedule> {
    if n < 3 || d == 0 || !(s >= 0.0) {
        return Err(Error::usage("super-smooth schedule needs n ≥ 3, d ≥ 1, s ≥ 0"));
    }
    let nf = n as f64;
    let ln = nf.ln();
    let df = d as f64;
    let eps_bar = nf.powf(-0.5) * ln.powf((df + 1.0 + s) / 2.0);
    let eps_tilde = nf.powf(-0.5) * ln.powf((df + 1.0) / 2.0);
    schedule_common(n, d, eps_bar, eps_tilde, ln.powf(df + s))
}

/// Sieve for a Hölder-type rate: `ε̄ = n^{-β}(log n)^{q+s}`, `H = n^{1−2β}(log n)^{2(q+s)−1}`,
/// `M = a² = σ̲^{-d} = n`.
pub fn schedule_holder(n: u64, beta: f64, q: f64, s: f64, d: usize) -> Result<Schedule> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(Error::usage(format!("β must lie in (0, 1/2), got {beta}")));
    }
    if n < 3 || d == 0 || !(q >= 0.0) || !(s > 0.0) {
        return Err(Error::usage("Hölder schedule needs n ≥ 3, d ≥ 1, q ≥ 0, s > 0"));
    }
    let nf = n as f64;
    let ln = nf.ln();
    let eps_bar = nf.powf(-beta) * ln.powf(q + s);
    let eps_tilde = nf.powf(-beta) * ln.powf(q);
    let h = nf.powf(1.0 - 2.0 * beta) * ln.powf(2.0 * (q + s) - 1.0);
    schedule_common(n, d, eps_bar, eps_tilde, h)
}

/// `(β, q)` of the ordinary-smooth rate in dimension `d`.
pub fn ordinary_smooth_exponents(d: usize) -> (f64, f64) {
    let df = d as f64;
    (2.0 / (4.0 + df), (4.0 * df + 2.0) / (df + 4.0))
}
