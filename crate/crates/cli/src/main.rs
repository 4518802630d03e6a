use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpmix::config::ExperimentConfig;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "dpmix", version, about = "Dirichlet-process location mixtures: priors, sieves, approximation audits and posterior rates")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw from the prior and check the stick-tail identity.
    PriorSim(PriorSimArgs),
    /// Run the blocked Gibbs sampler on a data file.
    Fit(FitArgs),
    /// Posterior contraction sweep over the n grid.
    Rates(RatesArgs),
    /// Sieve sizes and prior complement mass at a schedule.
    SieveAudit(SieveAuditArgs),
    /// Approximation checks.
    ApproxAudit(ApproxAuditArgs),
}

#[derive(Args, Debug)]
pub struct PriorSimArgs {
    /// Number of prior densities to draw.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Stop breaking sticks once the remaining mass is below this.
    #[arg(long, default_value_t = 1e-6)]
    pub tail_tol: f64,
    /// Simulations per stick-tail combination.
    #[arg(long, default_value_t = 100_000)]
    pub tail_sims: usize,
    /// Also write the drawn densities as text records.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// CSV file, one observation per row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub trunc: Option<usize>,
    /// Posterior draws as density records (default: <out-dir>/samples.txt).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum Truth {
    Supersmooth,
    Ordinarysmooth,
    Both,
}

#[derive(Args, Debug)]
pub struct RatesArgs {
    #[arg(long, value_enum, default_value_t = Truth::Both)]
    pub truth: Truth,
    /// Comma-separated sample sizes; overrides the configuration.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum Regime {
    Supersmooth,
    Holder,
}

#[derive(Args, Debug)]
pub struct SieveAuditArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    pub n: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = Regime::Supersmooth)]
    pub regime: Regime,
    #[arg(long, default_value_t = 0.5)]
    pub s: f64,
    /// Rate exponent (default: the ordinary-smooth value for the dimension).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Log power (default: the ordinary-smooth value for the dimension).
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub nsim: usize,
    /// Report file (default: <out-dir>/sieve_audit.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum Check {
    Discretize,
    Smoothing,
    Dirichlet,
    Perturbation,
    Thickness,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum RuleArg {
    ErrorTargeted,
    SigmaCells,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum Shape {
    Triweight,
    Tent,
    Uniform,
}

#[derive(Args, Debug)]
pub struct ApproxAuditArgs {
    #[arg(long, value_enum)]
    pub check: Check,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5")]
    pub sigmas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.03,0.01")]
    pub eps: Vec<f64>,
    #[arg(long, value_enum, default_value_t = RuleArg::ErrorTargeted)]
    pub rule: RuleArg,
    /// Nodes per log(1/ε) in the cell rule.
    #[arg(long, default_value_t = 0.5)]
    pub rule_c: f64,
    #[arg(long, value_enum, default_value_t = Shape::Triweight)]
    pub shape: Shape,
    #[arg(long, default_value_t = 0.1)]
    pub sigma_hi: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sigma_lo: f64,
    #[arg(long, default_value_t = 9)]
    pub steps: usize,
    /// Ball radius of the Dirichlet check.
    #[arg(long, default_value_t = 0.1)]
    pub ball_eps: f64,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub atoms: Vec<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    pub nsim: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dpmix: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> dpmix::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| dpmix::Error::Resource(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cli.command {
        Command::PriorSim(a) => commands::prior_sim(&cfg, &a),
        Command::Fit(a) => commands::fit(&cfg, &a),
        Command::Rates(a) => commands::rates(&mut cfg, &a),
        Command::SieveAudit(a) => commands::sieve_audit(&cfg, &a),
        Command::ApproxAudit(a) => commands::approx_audit(&cfg, &a),
    }
}
