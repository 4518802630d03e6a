//! Posterior-contraction experiments: true densities, the rate sweep and
//! its CSV/SVG report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::approx::CompactDensity;
use crate::config::ExperimentConfig;
use crate::density::{DiscreteMeasure, MixtureDensity, Point};
use crate::inference::{fit, FitConfig, PosteriorMean, PosteriorSampleSet};
use crate::metrics::{compare, hellinger, BoundingBox, DensityFunction, QuadratureScheme};
use crate::numeric::{fit_line, mean_se, median, LineFit};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrueDensitySpec {
    /// `p_{F₀,σ₀}` with `F₀` given by row-major atoms and weights.
    Supersmooth {
        atoms: Vec<f64>,
        weights: Vec<f64>,
        sigma0: f64,
        dim: usize,
    },
    /// Product triweight `(35/32)(1 − (x/s)²)³/s` per axis.
    Ordinarysmooth { scale: f64, dim: usize },
}

impl TrueDensitySpec {
    /// `½δ_{−1} + ½δ_{+1}` (on the diagonal for `d > 1`) with `σ₀ = ½`.
    pub fn supersmooth_default(dim: usize) -> Self {
        let mut atoms = vec![-1.0; dim];
        atoms.extend(vec![1.0; dim]);
        TrueDensitySpec::Supersmooth {
            atoms,
            weights: vec![0.5, 0.5],
            sigma0: 0.5,
            dim,
        }
    }

    pub fn ordinarysmooth_default(dim: usize) -> Self {
        TrueDensitySpec::Ordinarysmooth { scale: 1.0, dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            TrueDensitySpec::Supersmooth { dim, .. } | TrueDensitySpec::Ordinarysmooth { dim, .. } => *dim,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrueDensitySpec::Supersmooth { .. } => "supersmooth",
            TrueDensitySpec::Ordinarysmooth { .. } => "ordinarysmooth",
        }
    }

    /// Exponent of `n` in the contraction rate, ignoring log factors.
    pub fn target_exponent(&self) -> f64 {
        match self {
            TrueDensitySpec::Supersmooth { .. } => -0.5,
            TrueDensitySpec::Ordinarysmooth { dim, .. } => -2.0 / (4.0 + *dim as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub enum TrueDensity {
    Mixture(MixtureDensity),
    Compact(CompactDensity),
}

impl TrueDensity {
    pub fn sample<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Point>> {
        match self {
            TrueDensity::Mixture(m) => m.sample(n, rng),
            TrueDensity::Compact(c) => c
                .sample_flat(n, rng)
                .chunks_exact(c.dim())
                .map(|x| Point::new(x.to_vec()))
                .collect(),
        }
    }
}

impl DensityFunction for TrueDensity {
    fn dim(&self) -> usize {
        match self {
            TrueDensity::Mixture(m) => DensityFunction::dim(m),
            TrueDensity::Compact(c) => DensityFunction::dim(c),
        }
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        match self {
            TrueDensity::Mixture(m) => m.pdf(x),
            TrueDensity::Compact(c) => c.pdf(x),
        }
    }

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        match self {
            TrueDensity::Mixture(m) => m.ln_pdf(x),
            TrueDensity::Compact(c) => c.pdf(x).ln(),
        }
    }

    fn support_hint(&self) -> BoundingBox {
        match self {
            TrueDensity::Mixture(m) => m.support_hint(),
            TrueDensity::Compact(c) => c.support_hint(),
        }
    }
}

pub fn make_true_density(spec: &TrueDensitySpec) -> Result<TrueDensity> {
    match spec {
        TrueDensitySpec::Supersmooth {
            atoms,
            weights,
            sigma0,
            dim,
        } => {
            let f0 = DiscreteMeasure::from_flat(*dim, atoms.clone(), weights.clone())?;
            if !f0.is_normalized() {
                return Err(Error::usage("F₀ must be a probability measure"));
            }
            Ok(TrueDensity::Mixture(MixtureDensity::new(f0, *sigma0)?))
        }
        TrueDensitySpec::Ordinarysmooth { scale, dim } => {
            Ok(TrueDensity::Compact(CompactDensity::new(
                vec![crate::approx::Factor::Polynomial(3); *dim],
                *scale,
            )?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRecord {
    pub n: usize,
    pub rep: usize,
    /// `h(p₀, posterior mean density)`.
    pub hellinger: f64,
    /// Standard error of `posterior_hellinger` over the retained draws.
    pub se: f64,
    pub runtime_s: Option<f64>,
    /// Mean over retained draws of `h(p₀, p_draw)`.
    pub posterior_hellinger: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NSummary {
    pub n: usize,
    pub mean: f64,
    /// Standard error across replications.
    pub se: f64,
    pub median: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRunResult {
    pub label: String,
    pub target: f64,
    pub records: Vec<RateRecord>,
    pub summaries: Vec<NSummary>,
    pub fit: LineFit,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub failed: usize,
}

impl RateRunResult {
    pub fn median_at(&self, n: usize) -> Option<f64> {
        self.summaries.iter().find(|s| s.n == n).map(|s| s.median)
    }
}

/// Hellinger errors of one fit: posterior mean, mean over draws and its s.e.
pub fn evaluate_fit(p0: &dyn DensityFunction, samples: &PosteriorSampleSet, points: usize) -> Result<(f64, f64, f64)> {
    let mean = PosteriorMean::new(samples)?;
    let scheme = QuadratureScheme::grid(points);
    let h = hellinger(p0, &mean, &scheme)?.value;
    let per_draw: Vec<f64> = samples
        .draws
        .iter()
        .map(|m| hellinger(p0, m, &scheme).map(|e| e.value))
        .collect::<Result<_>>()?;
    let (hm, se) = mean_se(&per_draw);
    Ok((h, hm, if se.is_finite() { se } else { 0.0 }))
}

fn run_one(p0: &TrueDensity, cfg: &ExperimentConfig, n: usize, rep: usize) -> Result<RateRecord> {
    let start = Instant::now();
    let job_seed = derive_seed(derive_seed(cfg.seed, n as u64), rep as u64);
    let data = p0.sample(n, &mut stream(job_seed, 0))?;
    let (iterations, burn_in, thin) = cfg.rates.schedule(n);
    let fit_cfg = FitConfig {
        iterations,
        burn_in,
        thin,
        seed: derive_seed(job_seed, 1),
        ..cfg.fit.clone()
    };
    let prior = cfg.prior.build()?;
    let samples = fit(&data, &prior, &fit_cfg)?;
    let (hellinger, posterior_hellinger, se) = evaluate_fit(p0, &samples, cfg.rates.quadrature_points)?;
    Ok(RateRecord {
        n,
        rep,
        hellinger,
        se,
        runtime_s: cfg.record_runtime.then(|| start.elapsed().as_secs_f64()),
        posterior_hellinger,
    })
}

/// Fit every `(n, replication)` pair and regress log error on log n.
pub fn run_rate_experiment(spec: &TrueDensitySpec, cfg: &ExperimentConfig) -> Result<RateRunResult> {
    cfg.validate_for_rates()?;
    if spec.dim() != cfg.prior.dim {
        return Err(Error::usage("true density and prior have different dimensions"));
    }
    let p0 = make_true_density(spec)?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |r| (n, r)))
        .collect();
    let outcomes: Vec<Result<RateRecord>> = jobs.par_iter().map(|&(n, r)| run_one(&p0, cfg, n, r)).collect();
    let mut records = Vec::new();
    let mut failed = 0;
    for ((n, r), o) in jobs.iter().zip(outcomes) {
        match o {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("{} n={n} rep={r} failed: {e}", spec.label());
                failed += 1;
            }
        }
    }
    records.sort_by_key(|r| (r.n, r.rep));
    summarize(spec.label(), spec.target_exponent(), records, failed)
}

/// Per-n summaries and the log-log slope with a 95% t-interval.
pub fn summarize(label: &str, target: f64, records: Vec<RateRecord>, failed: usize) -> Result<RateRunResult> {
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.dedup();
    let summaries: Vec<NSummary> = ns
        .iter()
        .map(|&n| {
            let hs: Vec<f64> = records.iter().filter(|r| r.n == n).map(|r| r.hellinger).collect();
            let (mean, se) = mean_se(&hs);
            NSummary {
                n,
                mean,
                se,
                median: median(&hs),
                reps: hs.len(),
            }
        })
        .collect();
    if summaries.len() < 2 {
        return Err(Error::Numerical("fewer than two sample sizes produced results".into()));
    }
    let xs: Vec<f64> = summaries.iter().map(|s| (s.n as f64).ln()).collect();
    let ys: Vec<f64> = summaries.iter().map(|s| s.mean.ln()).collect();
    let fit = fit_line(&xs, &ys);
    let df = (summaries.len() as f64 - 2.0).max(1.0);
    let t = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(0.975);
    Ok(RateRunResult {
        label: label.to_string(),
        target,
        records,
        summaries,
        ci_lo: fit.slope - t * fit.slope_se,
        ci_hi: fit.slope + t * fit.slope_se,
        fit,
        failed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub records: PathBuf,
    pub summary: PathBuf,
    pub plot: PathBuf,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn emit_report(result: &RateRunResult, dir: &Path, prefix: &str) -> Result<ReportPaths> {
    if result.records.is_empty() {
        return Err(Error::usage("no successful replications to report"));
    }
    std::fs::create_dir_all(dir)?;
    let paths = ReportPaths {
        records: dir.join(format!("{prefix}_records.csv")),
        summary: dir.join(format!("{prefix}_summary.csv")),
        plot: dir.join(format!("{prefix}_plot.svg")),
    };
    let mut w = csv::Writer::from_path(&paths.records)?;
    w.write_record(["n", "rep", "hellinger", "se", "runtime_s", "posterior_hellinger"])?;
    for r in &result.records {
        w.write_record([
            r.n.to_string(),
            r.rep.to_string(),
            fmt_f64(r.hellinger),
            fmt_f64(r.se),
            r.runtime_s.map_or_else(|| "NA".to_string(), fmt_f64),
            fmt_f64(r.posterior_hellinger),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(&paths.summary)?;
    w.write_record(["slope", "ci_lo", "ci_hi", "target", "slope_se", "failed"])?;
    w.write_record([
        fmt_f64(result.fit.slope),
        fmt_f64(result.ci_lo),
        fmt_f64(result.ci_hi),
        fmt_f64(result.target),
        fmt_f64(result.fit.slope_se),
        result.failed.to_string(),
    ])?;
    w.flush()?;
    std::fs::write(&paths.plot, render_svg(result))?;
    Ok(paths)
}

pub fn read_records(path: &Path) -> Result<Vec<RateRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    rdr.records()
        .map(|row| {
            let row = row?;
            if row.len() != 6 {
                return Err(Error::Parse(format!("expected 6 columns, got {}", row.len())));
            }
            Ok(RateRecord {
                n: row[0].parse().map_err(|e| Error::Parse(format!("n: {e}")))?,
                rep: row[1].parse().map_err(|e| Error::Parse(format!("rep: {e}")))?,
                hellinger: parse(&row[2])?,
                se: parse(&row[3])?,
                runtime_s: if &row[4] == "NA" { None } else { Some(parse(&row[4])?) },
                posterior_hellinger: parse(&row[5])?,
            })
        })
        .collect()
}

/// Log-log plot: replications as dots, per-n means, the fitted line and a
/// guide line with the target slope through the first mean.
pub fn render_svg(result: &RateRunResult) -> String {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const M: f64 = 60.0;
    let xs: Vec<f64> = result.records.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = result.records.iter().map(|r| r.hellinger.ln()).collect();
    let (x0, x1) = span(&xs);
    let first = &result.summaries[0];
    let guide = |x: f64| first.mean.ln() + result.target * (x - (first.n as f64).ln());
    let fitted = |x: f64| result.fit.intercept + result.fit.slope * x;
    let mut all_y = ys.clone();
    all_y.extend([guide(x0), guide(x1), fitted(x0), fitted(x1)]);
    let (y0, y1) = span(&all_y);
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<line x1="{M}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{M}" y1="{M}" x2="{M}" y2="{b}" stroke="black"/>
<text x="{cx}" y="{tb}" text-anchor="middle" font-size="13">log n</text>
<text x="16" y="{cy}" font-size="13" transform="rotate(-90 16 {cy})" text-anchor="middle">log Hellinger error</text>
<text x="{cx}" y="30" text-anchor="middle" font-size="14">{label}: slope {slope:.3} (target {target:.3})</text>"#,
        b = H - M,
        r = W - M,
        cx = W / 2.0,
        cy = H / 2.0,
        tb = H - 20.0,
        label = result.label,
        slope = result.fit.slope,
        target = result.target,
    );
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="gray"/>"#, px(*x), py(*y));
    }
    let poly = |pts: Vec<(f64, f64)>, color: &str, dash: &str| {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            p.join(" ")
        )
    };
    let means = result
        .summaries
        .iter()
        .map(|m| ((m.n as f64).ln(), m.mean.ln()))
        .collect();
    let _ = writeln!(s, "{}", poly(means, "black", ""));
    let _ = writeln!(s, "{}", poly(vec![(x0, fitted(x0)), (x1, fitted(x1))], "steelblue", ""));
    let _ = writeln!(
        s,
        "{}",
        poly(vec![(x0, guide(x0)), (x1, guide(x1))], "firebrick", r#" stroke-dasharray="6 4""#)
    );
    s.push_str("</svg>\n");
    s
}

fn span(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

/// `‖p_{F₀,σ₀} − p_{F₀,σ}‖₁` for `σ < σ₀`, with its bound `1 − σ/σ₀`.
pub fn bandwidth_shrink_l1(spec: &TrueDensitySpec, sigma: f64) -> Result<(f64, f64)> {
    let TrueDensitySpec::Supersmooth { atoms, weights, sigma0, dim } = spec else {
        return Err(Error::usage("needs a super-smooth density"));
    };
    if !(sigma > 0.0 && sigma < *sigma0) {
        return Err(Error::usage("σ must lie in (0, σ₀)"));
    }
    let f0 = DiscreteMeasure::from_flat(*dim, atoms.clone(), weights.clone())?;
    let p = MixtureDensity::new(f0.clone(), *sigma0)?;
    let q = MixtureDensity::new(f0, sigma)?;
    let l1 = compare(&p, &q, &QuadratureScheme::default_grid(*dim))?.l1.value;
    Ok((l1, 1.0 - sigma / sigma0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::FitConfig;

    #[test]
    fn triweight_normalizer_and_boundary() {
        let p = make_true_density(&TrueDensitySpec::ordinarysmooth_default(1)).unwrap();
        assert!((p.pdf(&[0.0]) - 35.0 / 32.0).abs() < 1e-14);
        assert_eq!(p.pdf(&[1.0]), 0.0);
        let TrueDensity::Compact(c) = &p else { panic!() };
        let h = c.hessian(&[1.0 - 1e-7]).unwrap()[0];
        assert!(h.abs() < 1e-5);
        let mass = compare(&p, &p, &QuadratureScheme::grid(4096)).unwrap().mass_p;
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn supersmooth_pdf_at_zero() {
        let p = make_true_density(&TrueDensitySpec::supersmooth_default(1)).unwrap();
        let phi = (-2.0f64).exp() / (0.5 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((p.pdf(&[0.0]) - phi).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_shrink_bound() {
        let spec = TrueDensitySpec::supersmooth_default(1);
        // the bound is only valid close to σ₀, where its slope 4φ(1) < 1 takes over
        for r in [0.96, 0.98, 0.99, 0.999] {
            let (l1, bound) = bandwidth_shrink_l1(&spec, 0.5 * r).unwrap();
            assert!(l1 <= bound, "{l1} > {bound}");
        }
        let (l1, bound) = bandwidth_shrink_l1(&spec, 0.1).unwrap();
        assert!(l1 > bound);
    }

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            n_grid: vec![20, 40, 80, 160],
            replications: 2,
            ..Default::default()
        };
        cfg.rates.base_iterations = 60;
        cfg.rates.per_observation = 0;
        cfg.rates.retained = 10;
        cfg.rates.quadrature_points = 256;
        cfg.fit = FitConfig { truncation: Some(6), ..cfg.fit };
        cfg
    }

    #[test]
    fn report_round_trips_and_is_deterministic() {
        let cfg = tiny_cfg();
        let spec = TrueDensitySpec::supersmooth_default(1);
        let a = run_rate_experiment(&spec, &cfg).unwrap();
        let b = run_rate_experiment(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.records.iter().all(|r| r.hellinger > 0.0 && r.hellinger < 2f64.sqrt()));
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&a, dir.path(), "ss").unwrap();
        let back = read_records(&paths.records).unwrap();
        assert_eq!(back, a.records);
        let svg = std::fs::read_to_string(&paths.plot).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 3);
    }

    #[test]
    fn empty_report_writes_nothing() {
        let r = RateRunResult {
            label: "x".into(),
            target: -0.5,
            records: vec![],
            summaries: vec![],
            fit: fit_line(&[0.0, 1.0], &[0.0, 1.0]),
            ci_lo: 0.0,
            ci_hi: 0.0,
            failed: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sub");
        assert!(matches!(emit_report(&r, &out, "x"), Err(Error::Usage(_))));
        assert!(!out.exists());
    }
}
