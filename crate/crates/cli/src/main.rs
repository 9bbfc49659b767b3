use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use circgp::circular::wrap;
use circgp::pgsp::PgspParams;
use circgp::wgsp::WgspParams;
use circgp_cli::commands::{self, KrigRequest, SimParams, SimulateSpec, DEFAULT_ROSE_BINS};
use circgp_cli::{read_archive, read_sites, CliError, CliResult, CoordFormat, DirectionUnit, Layout, ModelKind};
use circgp_cli::{RunConfig, EXIT_NOT_CONVERGED};

/// Bayesian spatial models for directional data.
#[derive(Debug, Parser)]
#[command(name = "circgp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Circular summary statistics and a rose histogram of a data set.
    Describe(DescribeArgs),
    /// Simulate a wrapped or projected field at synthetic sites.
    Simulate(SimulateArgs),
    /// Fit a model and write a posterior archive.
    Fit(FitArgs),
    /// Predict directions at new sites from a posterior archive.
    Krig(KrigArgs),
    /// Hold out sites, refit on the rest and score the predictions.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Site CSV with columns site_id,x,y,direction.
    #[arg(long)]
    data: PathBuf,
    /// Coordinate format: utm_m or lonlat_deg.
    #[arg(long, default_value = "utm_m")]
    format: CoordFormat,
    /// Direction unit: deg or rad.
    #[arg(long, default_value = "deg")]
    unit: DirectionUnit,
}

#[derive(Debug, Args)]
struct DescribeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Rose histogram sectors.
    #[arg(long, default_value_t = DEFAULT_ROSE_BINS)]
    bins: usize,
    /// Summary CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rose histogram CSV output.
    #[arg(long)]
    rose_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// wrapped or projected.
    #[arg(long)]
    model: ModelKind,
    /// Wrapped mean direction, radians.
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Wrapped variance.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Projected mean vector, first component.
    #[arg(long, default_value_t = 0.0)]
    mu1: f64,
    /// Projected mean vector, second component.
    #[arg(long, default_value_t = 0.0)]
    mu2: f64,
    /// Projected variance of the first component.
    #[arg(long, default_value_t = 1.0)]
    tau2: f64,
    /// Projected cross-correlation.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Exponential correlation decay, 1/km.
    #[arg(long)]
    phi: f64,
    /// grid or random.
    #[arg(long, default_value = "random")]
    layout: Layout,
    /// Number of sites.
    #[arg(long)]
    n: usize,
    /// Rectangle width, km.
    #[arg(long, default_value_t = 300.0)]
    width: f64,
    /// Rectangle height, km.
    #[arg(long, default_value_t = 300.0)]
    height: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Observation CSV (metres, degrees).
    #[arg(long)]
    out: PathBuf,
    /// Latent-truth CSV; defaults to <out stem>.truth.csv.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    /// File, then environment, then `--set`.
    fn load(&self, base: Option<RunConfig>) -> CliResult<RunConfig> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(cfg)) => cfg,
            (None, None) => RunConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Archive directory; defaults to the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KrigArgs {
    /// Posterior archive directory.
    #[arg(long)]
    archive: PathBuf,
    /// Site CSV; defaults to the data the archive was fitted to.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target CSV with columns target_id,x,y.
    #[arg(long)]
    targets: PathBuf,
    /// Expected model; an archive of the other model is an error.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Seed for predictive draws; defaults to the archive's krig_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Predictions CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-draw predictive sample CSV.
    #[arg(long)]
    draws_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Take the configuration from an archive's snapshot.
    #[arg(long, conflicts_with = "config")]
    archive: Option<PathBuf>,
    /// Held-out sites; overrides the config's n_valid.
    #[arg(long)]
    n_valid: Option<usize>,
    /// Split seed; overrides the config's split_seed.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Summary CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-site CSV.
    #[arg(long)]
    sites_out: Option<PathBuf>,
}

fn describe(a: &DescribeArgs, out: &mut dyn Write) -> CliResult<i32> {
    let data = read_sites(&a.data.data, a.data.format, a.data.unit)?;
    let d = commands::cmd_describe(&data, a.bins)?;
    commands::print_describe(out, &d).map_err(stdout_err)?;
    if let Some(path) = &a.out {
        commands::write_csv(path, |b| commands::write_summary_csv(b, &d))?;
    }
    if let Some(path) = &a.rose_out {
        commands::write_csv(path, |b| commands::write_rose_csv(b, &d))?;
    }
    Ok(0)
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> CliResult<i32> {
    let params = match a.model {
        ModelKind::Wrapped => SimParams::Wrapped(WgspParams { mu: wrap(a.mu)?, sigma2: a.sigma2, phi: a.phi }),
        ModelKind::Projected => {
            SimParams::Projected(PgspParams { mu: [a.mu1, a.mu2], tau2: a.tau2, rho: a.rho, phi: a.phi })
        }
    };
    let spec =
        SimulateSpec { params, layout: a.layout, n: a.n, width_km: a.width, height_km: a.height, seed: a.seed };
    let sim = commands::cmd_simulate(&spec)?;
    let truth = a.truth_out.clone().unwrap_or_else(|| commands::truth_path(&a.out));
    commands::write_simulation(&a.out, &truth, &sim)?;
    writeln!(out, "wrote {} sites to {} (truth: {})", sim.sites.len(), a.out.display(), truth.display())
        .map_err(stdout_err)?;
    Ok(0)
}

fn fit(a: &FitArgs, out: &mut dyn Write) -> CliResult<i32> {
    let cfg = a.config.load(None)?;
    let dir = a
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| CliError::Validation("fit: no archive directory (use --out or `output`)".into()))?;
    let archive = commands::cmd_fit(&cfg, &dir)?;
    commands::print_fit(out, &archive).map_err(stdout_err)?;
    writeln!(out, "archive written to {}", dir.display()).map_err(stdout_err)?;
    Ok(match commands::converged(&archive.manifest.psrf) {
        Some(false) => EXIT_NOT_CONVERGED,
        _ => 0,
    })
}

fn krig(a: &KrigArgs, out: &mut dyn Write) -> CliResult<i32> {
    let req = KrigRequest {
        archive: a.archive.clone(),
        data: a.data.clone(),
        targets: a.targets.clone(),
        model: a.model,
        seed: a.seed,
    };
    let k = commands::cmd_krig(&req)?;
    commands::write_krig_outputs(&a.out, a.draws_out.as_deref(), &k)?;
    writeln!(out, "wrote {} predictions to {}", k.results.len(), a.out.display()).map_err(stdout_err)?;
    Ok(0)
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<i32> {
    let base = a.archive.as_deref().map(|dir| read_archive(dir)?.config()).transpose()?;
    let mut cfg = a.config.load(base)?;
    if let Some(n) = a.n_valid {
        cfg.n_valid = n;
    }
    if let Some(s) = a.split_seed {
        cfg.split_seed = s;
    }
    let e = commands::cmd_eval(&cfg)?;
    commands::print_eval(out, &e).map_err(stdout_err)?;
    commands::write_eval_outputs(&a.out, a.sites_out.as_deref(), &e)?;
    Ok(0)
}

fn stdout_err(e: io::Error) -> CliError {
    CliError::Io { path: PathBuf::from("<stdout>"), source: e }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match &cli.command {
        Command::Describe(a) => describe(a, &mut out),
        Command::Simulate(a) => simulate(a, &mut out),
        Command::Fit(a) => fit(a, &mut out),
        Command::Krig(a) => krig(a, &mut out),
        Command::Eval(a) => eval(a, &mut out),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
