use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dpmix::approx::{
    build_thickness_partition, collapse, dirichlet_small_ball, discretize, fit_small_ball_decay, grid_partition,
    log_spaced_desc, perturbation_bound_check, smoothing_rate_audit, CellRule, CompactDensity, ConvolutionScheme,
    Factor, MixingDistribution,
};
use dpmix::config::ExperimentConfig;
use dpmix::density::{DiscreteMeasure, Point};
use dpmix::experiments::{emit_report, fmt_f64, run_rate_experiment, TrueDensitySpec};
use dpmix::inference::{fit as run_fit, FitConfig};
use dpmix::metrics::QuadratureScheme;
use dpmix::prior::{draw_prior, stick_tail_frequency, stick_tail_prob, stick_tail_stirling_bound};
use dpmix::rng::{derive_seed, stream};
use dpmix::sieve::{log_covering_bound, ordinary_smooth_exponents, prior_complement_mass, schedule_holder, schedule_supersmooth, SieveNet};
use dpmix::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::{ApproxAuditArgs, Check, FitArgs, PriorSimArgs, RatesArgs, Regime, RuleArg, Shape, SieveAuditArgs, Truth};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Stick-tail combinations `(H, |α|, ε)` checked by `prior-sim`.
pub const TAIL_GRID: [(usize, f64, f64); 12] = [
    (1, 1.0, 0.5),
    (2, 1.0, 0.1),
    (5, 1.0, 0.1),
    (10, 1.0, 0.01),
    (3, 0.5, 0.2),
    (8, 0.5, 0.05),
    (4, 2.0, 0.1),
    (10, 2.0, 0.01),
    (20, 2.0, 0.001),
    (15, 5.0, 0.1),
    (30, 5.0, 0.01),
    (6, 0.2, 0.3),
];

pub fn prior_sim(cfg: &ExperimentConfig, a: &PriorSimArgs) -> Result<()> {
    let prior = cfg.prior.build()?;
    let mut rng = stream(cfg.seed, 0);
    let mut w = writer(&cfg.out_dir.join("prior_draws.csv"))?;
    w.write_record(["draw", "sigma", "sticks", "tail_deficit", "max_weight", "mean"])?;
    let mut records = a.samples_out.as_ref().map(|p| File::create(p).map(BufWriter::new)).transpose()?;
    for i in 0..a.draws {
        let d = draw_prior(&prior, a.tail_tol, &mut rng)?;
        let m = d.density.mixing();
        let mean: f64 = m.atoms().map(|(z, w)| w * z[0]).sum();
        w.write_record([
            i.to_string(),
            fmt_f64(d.density.sigma()),
            d.sticks.len().to_string(),
            fmt_f64(d.sticks.tail_deficit),
            fmt_f64(m.weights().iter().copied().fold(0.0, f64::max)),
            fmt_f64(mean),
        ])?;
        if let Some(out) = records.as_mut() {
            d.density.write_record(out)?;
        }
    }
    w.flush()?;
    if let Some(mut out) = records {
        out.flush()?;
    }
    let mut w = writer(&cfg.out_dir.join("stick_tail.csv"))?;
    w.write_record(["H", "alpha", "eps", "mc_frequency", "se", "exact", "stirling_bound"])?;
    for (k, &(h, alpha, eps)) in TAIL_GRID.iter().enumerate() {
        let (freq, se) = stick_tail_frequency(h, eps, alpha, a.tail_sims, derive_seed(cfg.seed, 100 + k as u64))?;
        w.write_record([
            h.to_string(),
            fmt_f64(alpha),
            fmt_f64(eps),
            fmt_f64(freq),
            fmt_f64(se),
            fmt_f64(stick_tail_prob(h, eps, alpha)?),
            fmt_f64(stick_tail_stirling_bound(h, eps, alpha)?),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one observation per row; a non-numeric first row is taken as a header.
pub fn read_data(path: &Path) -> Result<Vec<Point>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let parsed: std::result::Result<Vec<f64>, _> = row.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => out.push(Point::new(v)?),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("row {}: {e}", i + 1))),
        }
    }
    Ok(out)
}

pub fn fit(cfg: &ExperimentConfig, a: &FitArgs) -> Result<()> {
    let data = read_data(&a.data)?;
    let mut prior_cfg = cfg.prior;
    if let Some(p) = data.first() {
        prior_cfg.dim = p.dim();
    }
    let prior = prior_cfg.build()?;
    let fit_cfg = FitConfig {
        iterations: a.iters.unwrap_or(cfg.fit.iterations),
        burn_in: a.burnin.unwrap_or(cfg.fit.burn_in),
        thin: a.thin.unwrap_or(cfg.fit.thin),
        truncation: a.trunc.or(cfg.fit.truncation),
        seed: cfg.seed,
        ..cfg.fit.clone()
    };
    let samples = run_fit(&data, &prior, &fit_cfg)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir.join("samples.txt"));
    let mut f = BufWriter::new(File::create(out)?);
    for d in &samples.draws {
        d.write_record(&mut f)?;
    }
    f.flush()?;
    let mut w = writer(&cfg.out_dir.join("fit_trace.csv"))?;
    w.write_record(["draw", "sigma", "occupied_weight_max", "atoms_above_1e-3"])?;
    for (i, d) in samples.draws.iter().enumerate() {
        let ws = d.mixing().weights();
        w.write_record([
            i.to_string(),
            fmt_f64(d.sigma()),
            fmt_f64(ws.iter().copied().fold(0.0, f64::max)),
            ws.iter().filter(|&&x| x > 1e-3).count().to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = writer(&cfg.out_dir.join("fit_summary.csv"))?;
    w.write_record(["draws", "truncation", "burn_in_acceptance", "acceptance", "final_step"])?;
    w.write_record([
        samples.len().to_string(),
        samples.truncation.to_string(),
        fmt_f64(samples.burn_in_acceptance),
        fmt_f64(samples.acceptance),
        fmt_f64(samples.final_step),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn rates(cfg: &mut ExperimentConfig, a: &RatesArgs) -> Result<()> {
    if let Some(g) = &a.n_grid {
        cfg.n_grid = g.clone();
    }
    if let Some(r) = a.reps {
        cfg.replications = r;
    }
    let d = cfg.prior.dim;
    let mut specs = Vec::new();
    if a.truth != Truth::Ordinarysmooth {
        specs.push(TrueDensitySpec::supersmooth_default(d));
    }
    if a.truth != Truth::Supersmooth {
        specs.push(TrueDensitySpec::ordinarysmooth_default(d));
    }
    let mut results = Vec::new();
    for spec in &specs {
        let r = run_rate_experiment(spec, cfg)?;
        emit_report(&r, &cfg.out_dir, spec.label())?;
        println!(
            "{}: slope {:.3} [{:.3}, {:.3}], target {:.3}, failed {}",
            r.label, r.fit.slope, r.ci_lo, r.ci_hi, r.target, r.failed
        );
        results.push(r);
    }
    if results.len() == 2 {
        let n = *cfg.n_grid.last().expect("validated grid");
        let mut w = writer(&cfg.out_dir.join("rates_comparison.csv"))?;
        w.write_record(["n", "supersmooth_median", "ordinarysmooth_median"])?;
        let med = |i: usize| results[i].median_at(n).map_or_else(|| "NA".to_string(), fmt_f64);
        w.write_record([n.to_string(), med(0), med(1)])?;
        w.flush()?;
    }
    Ok(())
}

pub fn sieve_audit(cfg: &ExperimentConfig, a: &SieveAuditArgs) -> Result<()> {
    let mut prior_cfg = cfg.prior;
    prior_cfg.dim = a.dim;
    let prior = prior_cfg.build()?;
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir.join("sieve_audit.csv"));
    let mut w = writer(&out)?;
    w.write_record([
        "n",
        "regime",
        "dim",
        "eps",
        "a",
        "sigma_floor",
        "M",
        "H",
        "box_term",
        "sigma_low_term",
        "sigma_high_term",
        "tail_term",
        "box_envelope",
        "tail_stirling",
        "bound_sum",
        "mc_estimate",
        "se",
        "exact_net_log_size",
        "bound_value",
    ])?;
    let (beta0, q0) = ordinary_smooth_exponents(a.dim);
    for (k, &n) in a.n.iter().enumerate() {
        let sched = match a.regime {
            Regime::Supersmooth => schedule_supersmooth(n, a.s, a.dim)?,
            Regime::Holder => schedule_holder(n, a.beta.unwrap_or(beta0), a.q.unwrap_or(q0), a.s, a.dim)?,
        };
        let spec = sched.spec;
        let rep = prior_complement_mass(&spec, &prior, a.nsim, derive_seed(cfg.seed, k as u64))?;
        let net = SieveNet::new(spec)?;
        w.write_record([
            n.to_string(),
            format!("{:?}", a.regime).to_lowercase(),
            a.dim.to_string(),
            fmt_f64(spec.eps),
            fmt_f64(spec.box_half_width),
            fmt_f64(spec.sigma_floor),
            spec.sigma_steps.to_string(),
            spec.active_atoms.to_string(),
            fmt_f64(rep.box_term),
            fmt_f64(rep.sigma_low_term),
            fmt_f64(rep.sigma_high_term),
            fmt_f64(rep.tail_term),
            fmt_f64(rep.box_envelope),
            fmt_f64(rep.tail_stirling),
            fmt_f64(rep.bound_sum()),
            fmt_f64(rep.mc_estimate),
            fmt_f64(rep.se),
            fmt_f64(net.ln_size()),
            fmt_f64(log_covering_bound(&spec)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn approx_audit(cfg: &ExperimentConfig, a: &ApproxAuditArgs) -> Result<()> {
    let dir = &cfg.out_dir;
    match a.check {
        Check::Discretize => {
            let rule = match a.rule {
                RuleArg::ErrorTargeted => CellRule::ErrorTargeted { c: a.rule_c },
                RuleArg::SigmaCells => CellRule::SigmaCells { c: a.rule_c },
            };
            let p0 = MixingDistribution::Compact(CompactDensity::uniform(a.dim, 1.0)?);
            let mut w = writer(&dir.join("approx_discretize.csv"))?;
            w.write_record([
                "sigma", "eps", "atoms", "sup_error", "l1_error", "fitted_c", "budget_form", "fitted_d", "nodes_per_cell",
                "cell_width", "degraded_cells",
            ])?;
            for &s in &a.sigmas {
                for &e in &a.eps {
                    let r = discretize(&p0, s, e, rule)?;
                    w.write_record([
                        fmt_f64(s),
                        fmt_f64(e),
                        r.atom_count.to_string(),
                        fmt_f64(r.sup_error),
                        fmt_f64(r.l1_error),
                        fmt_f64(r.sup_error * s.powi(a.dim as i32) / e),
                        fmt_f64(r.budget_form),
                        fmt_f64(r.atom_count as f64 / r.budget_form),
                        r.nodes_per_cell.to_string(),
                        fmt_f64(r.cell_width),
                        r.degraded_cells.to_string(),
                    ])?;
                }
            }
            w.flush()?;
        }
        Check::Smoothing => {
            let factor = match a.shape {
                Shape::Triweight => Factor::Polynomial(3),
                Shape::Tent => Factor::Tent,
                Shape::Uniform => Factor::Polynomial(0),
            };
            let p0 = CompactDensity::new(vec![factor; a.dim], 1.0)?;
            let sigmas = log_spaced_desc(a.sigma_hi, a.sigma_lo, a.steps);
            let r = smoothing_rate_audit(&p0, &sigmas, ConvolutionScheme::fine())?;
            for warn in &r.warnings {
                log::warn!("{warn}");
            }
            let mut w = writer(&dir.join("approx_smoothing.csv"))?;
            w.write_record(["sigma", "hellinger"])?;
            for (s, h) in r.sigmas.iter().zip(&r.hellinger) {
                w.write_record([fmt_f64(*s), fmt_f64(*h)])?;
            }
            w.flush()?;
            let mut w = writer(&dir.join("approx_smoothing_summary.csv"))?;
            w.write_record(["shape", "slope", "slope_se", "dropped", "warnings"])?;
            w.write_record([
                format!("{:?}", a.shape).to_lowercase(),
                fmt_f64(r.fit.slope),
                fmt_f64(r.fit.slope_se),
                r.dropped.len().to_string(),
                r.warnings.join("; "),
            ])?;
            w.flush()?;
        }
        Check::Dirichlet => {
            let eps = a.ball_eps;
            let mut w = writer(&dir.join("approx_dirichlet.csv"))?;
            w.write_record(["N", "eps", "estimate", "se", "hits", "upper_95", "c_n"])?;
            let mut points = Vec::new();
            for (k, &n) in a.atoms.iter().enumerate() {
                let r = dirichlet_small_ball(
                    &vec![1.0; n],
                    &vec![1.0 / n as f64; n],
                    eps,
                    a.nsim,
                    derive_seed(cfg.seed, k as u64),
                )?;
                let cn = if r.hits > 0 {
                    fmt_f64(-r.estimate.ln() / (n as f64 * (1.0 / eps).ln()))
                } else {
                    "NA".to_string()
                };
                if r.hits > 0 {
                    points.push((n, eps, r.estimate));
                }
                w.write_record([
                    n.to_string(),
                    fmt_f64(eps),
                    fmt_f64(r.estimate),
                    fmt_f64(r.se),
                    r.hits.to_string(),
                    r.upper_95.map_or_else(|| "NA".to_string(), fmt_f64),
                    cn,
                ])?;
            }
            w.flush()?;
            if points.len() >= 2 {
                let (c, ln_c) = fit_small_ball_decay(&points);
                let mut w = writer(&dir.join("approx_dirichlet_summary.csv"))?;
                w.write_record(["c_hat", "ln_C_hat"])?;
                w.write_record([fmt_f64(c), fmt_f64(ln_c)])?;
                w.flush()?;
            }
        }
        Check::Perturbation => {
            let base = dpmix::prior::BaseMeasure::gaussian(1.0, cfg.prior.base_tau, a.dim)?;
            let sigma = a.sigmas.first().copied().unwrap_or(0.3);
            let part = grid_partition(1.0, 8, a.dim, &base)?;
            let mut w = writer(&dir.join("approx_perturbation.csv"))?;
            w.write_record(["trial", "dim", "sigma", "max_diameter", "discrepancy", "rhs", "l1", "sup", "ratio"])?;
            for t in 0..a.trials {
                let mut rng = stream(cfg.seed, t as u64);
                let f = random_measure(a.dim, 5, 1.0, &mut rng)?;
                let fp = collapse(&f, &part)?;
                let r = perturbation_bound_check(&f, &fp, &part, sigma, &QuadratureScheme::default_grid(a.dim))?;
                w.write_record([
                    t.to_string(),
                    a.dim.to_string(),
                    fmt_f64(sigma),
                    fmt_f64(r.max_diameter),
                    fmt_f64(r.mass_discrepancy),
                    fmt_f64(r.rhs),
                    fmt_f64(r.l1),
                    fmt_f64(r.sup),
                    fmt_f64(r.ratio),
                ])?;
            }
            w.flush()?;
        }
        Check::Thickness => {
            let base = dpmix::prior::BaseMeasure::gaussian(1.0, cfg.prior.base_tau, 1)?;
            let p0 = MixingDistribution::Compact(CompactDensity::uniform(1, 1.0)?);
            let mut w = writer(&dir.join("approx_thickness.csv"))?;
            w.write_record(["sigma", "eps", "atoms", "cells", "count_form", "ratio", "min_mass", "mass_floor"])?;
            for &s in &a.sigmas {
                for &e in &a.eps {
                    let r = discretize(&p0, s, e, CellRule::default())?;
                    let t = build_thickness_partition(&r.measure, s, e, 1.0, cfg.approx.b, &base)?;
                    let min_mass = t.scheme.masses.iter().copied().fold(f64::INFINITY, f64::min);
                    w.write_record([
                        fmt_f64(s),
                        fmt_f64(e),
                        r.atom_count.to_string(),
                        t.scheme.len().to_string(),
                        fmt_f64(t.count_form),
                        fmt_f64(t.scheme.len() as f64 / t.count_form),
                        fmt_f64(min_mass),
                        fmt_f64(t.mass_floor),
                    ])?;
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// `k` atoms uniform on `[−a, a]^d` with flat Dirichlet weights.
pub fn random_measure<R: Rng + ?Sized>(dim: usize, k: usize, a: f64, rng: &mut R) -> Result<DiscreteMeasure> {
    let g = Gamma::new(1.0, 1.0).expect("unit gamma");
    let locs: Vec<f64> = (0..k * dim).map(|_| rng.random_range(-a..a)).collect();
    let raw: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMeasure::from_flat(dim, locs, raw.iter().map(|w| w / total).collect())
}
