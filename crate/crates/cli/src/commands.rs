//! The `describe`, `simulate`, `fit`, `krig` and `eval` subcommands.
//!
//! Each command is a library function returning its results; the `print_*`
//! and `write_*` helpers render them. Every command is deterministic given
//! its inputs and seeds.

use std::collections::HashMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};

use circgp::circular::{describe, rose_histogram, RoseBin};
use circgp::evaluation::evaluate;
use circgp::mcmc::{ChainRng, PSRF_THRESHOLD};
use circgp::{
    fit_pgsp, fit_wgsp, holdout_split, proj_krig, simulate_pgsp, simulate_wgsp, wrap_krig, EvalReport, KrigResult,
    CircularSummary, PgspParams, SiteTable, WgspParams,
};

use crate::archive::{read_archive, write_archive, Posterior, PosteriorArchive};
use crate::config::{Layout, ModelKind, RunConfig};
use crate::error::{validation, CliError, CliResult};
use crate::format::{exact, sig, sig6};
use crate::sites::{read_sites, read_sites_projected, read_targets, write_sites, write_sites_exact, Targets};

pub const DEFAULT_ROSE_BINS: usize = 16;

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let name = path.file_name().map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

/// Renders a CSV in memory and writes it atomically.
pub fn write_csv(path: &Path, render: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    render(&mut buf).map_err(|e| CliError::Io { path: path.to_path_buf(), source: io::Error::other(e) })?;
    write_atomic(path, &buf)
}

fn csv_rows<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn load_data(cfg: &RunConfig) -> CliResult<SiteTable> {
    read_sites(cfg.data_path()?, cfg.format, cfg.direction_unit)
}

// ---------------------------------------------------------------- describe

#[derive(Debug, Clone, PartialEq)]
pub struct DescribeOutput {
    pub summary: CircularSummary,
    pub rose: Vec<RoseBin<f64>>,
}

pub fn cmd_describe(data: &SiteTable, bins: usize) -> CliResult<DescribeOutput> {
    if data.is_empty() {
        return Err(validation("describe: the data set has no sites"));
    }
    Ok(DescribeOutput { summary: describe(data.directions())?, rose: rose_histogram(data.directions(), bins)? })
}

pub const SUMMARY_COLUMNS: [&str; 5] = ["n", "mean_direction", "median_direction", "variance", "std_dev"];

fn summary_row(s: &CircularSummary) -> Vec<String> {
    vec![
        s.n.to_string(),
        sig6(s.mean_dir.radians()),
        sig6(s.median_dir.radians()),
        sig6(s.variance),
        sig6(s.std_dev),
    ]
}

/// Prints the summary table at ten significant digits; directions in
/// radians.
pub fn print_describe(out: &mut dyn Write, d: &DescribeOutput) -> io::Result<()> {
    let s = &d.summary;
    let row = [
        s.n.to_string(),
        sig(s.mean_dir.radians(), 10),
        sig(s.median_dir.radians(), 10),
        sig(s.variance, 10),
        sig(s.std_dev, 10),
    ];
    for (h, v) in SUMMARY_COLUMNS.iter().zip(&row) {
        writeln!(out, "{h:<18}{v}")?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, d: &DescribeOutput) -> csv::Result<()> {
    csv_rows(out, &SUMMARY_COLUMNS, [summary_row(&d.summary)])
}

/// Rose bins with their bounds in degrees clockwise from north.
pub fn write_rose_csv<W: Write>(out: W, d: &DescribeOutput) -> csv::Result<()> {
    let width = 360.0 / d.rose.len() as f64;
    let n = d.summary.n as f64;
    csv_rows(
        out,
        &["bin", "start_deg", "end_deg", "count", "proportion"],
        d.rose.iter().enumerate().map(|(i, b)| {
            let start = i as f64 * width;
            vec![i.to_string(), sig6(start), sig6(start + width), b.count.to_string(), sig6(b.count as f64 / n)]
        }),
    )
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimParams {
    Wrapped(WgspParams),
    Projected(PgspParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateSpec {
    pub params: SimParams,
    pub layout: Layout,
    pub n: usize,
    /// Rectangle `[0, width] × [0, height]`, km.
    pub width_km: f64,
    pub height_km: f64,
    pub seed: u64,
}

/// Simulated observations and per-site latent truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub sites: SiteTable,
    pub truth_columns: Vec<&'static str>,
    pub truth: Vec<Vec<String>>,
}

/// `n` site coordinates in the rectangle: cell centres of the smallest
/// near-square grid with at least `n` cells (row-major, first `n` kept), or
/// uniform draws.
pub fn layout_coords<R: Rng + ?Sized>(layout: Layout, n: usize, width: f64, height: f64, rng: &mut R) -> Vec<(f64, f64)> {
    match layout {
        Layout::Grid => {
            let nx = ((n as f64 * width / height).sqrt().ceil() as usize).clamp(1, n.max(1));
            let ny = n.div_ceil(nx).max(1);
            let (dx, dy) = (width / nx as f64, height / ny as f64);
            (0..n).map(|i| (((i % nx) as f64 + 0.5) * dx, ((i / nx) as f64 + 0.5) * dy)).collect()
        }
        Layout::Random => (0..n).map(|_| (rng.random::<f64>() * width, rng.random::<f64>() * height)).collect(),
    }
}

pub fn cmd_simulate(spec: &SimulateSpec) -> CliResult<Simulated> {
    if spec.n == 0 {
        return Err(validation("simulate: n must be at least 1"));
    }
    if !(spec.width_km > 0.0 && spec.height_km > 0.0 && spec.width_km.is_finite() && spec.height_km.is_finite()) {
        return Err(validation("simulate: width and height must be positive"));
    }
    let mut rng = ChainRng::seed_from_u64(spec.seed);
    let coords = layout_coords(spec.layout, spec.n, spec.width_km, spec.height_km, &mut rng);
    match spec.params {
        SimParams::Wrapped(p) => {
            let sim = simulate_wgsp(&coords, &p, &mut rng)?;
            let truth = sim.latent.iter().zip(&sim.k).map(|(y, k)| vec![exact(*y), k.to_string()]).collect();
            Ok(Simulated { sites: sim.sites, truth_columns: vec!["latent", "k"], truth })
        }
        SimParams::Projected(p) => {
            let sim = simulate_pgsp(&coords, &p, &mut rng)?;
            let truth = sim.latent.iter().map(|v| vec![exact(v[0]), exact(v[1])]).collect();
            Ok(Simulated { sites: sim.sites, truth_columns: vec!["latent_1", "latent_2"], truth })
        }
    }
}

/// Observations in the default input format, and the full-precision truth
/// sidecar.
pub fn write_simulation(obs: &Path, truth: &Path, sim: &Simulated) -> CliResult<()> {
    write_csv(obs, |buf| write_sites(buf, &sim.sites))?;
    write_csv(truth, |buf| write_sites_exact(buf, &sim.sites, &sim.truth_columns, &sim.truth))
}

/// `obs.csv` becomes `obs.truth.csv`.
pub fn truth_path(obs: &Path) -> PathBuf {
    let stem = obs.file_stem().map_or_else(|| "simulated".into(), |s| s.to_string_lossy().into_owned());
    obs.with_file_name(format!("{stem}.truth.csv"))
}

// --------------------------------------------------------------------- fit

pub fn fit_posterior(cfg: &RunConfig, data: &SiteTable) -> CliResult<Posterior> {
    Ok(match cfg.model {
        ModelKind::Wrapped => Posterior::Wrapped(fit_wgsp(data, &cfg.wgsp, &cfg.chain)?),
        ModelKind::Projected => Posterior::Projected(fit_pgsp(data, &cfg.pgsp, &cfg.chain)?),
    })
}

/// Whether every PSRF is below the threshold; `None` when none could be
/// computed.
pub fn converged(psrf: &[(String, Option<f64>)]) -> Option<bool> {
    (!psrf.is_empty()).then(|| psrf.iter().all(|(_, v)| v.is_some_and(|v| v < PSRF_THRESHOLD)))
}

/// Validates `cfg`, fits the model and writes the archive to `out`.
pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> CliResult<PosteriorArchive> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let archive = PosteriorArchive::new(fit_posterior(cfg, &data)?, cfg, data.ids());
    write_archive(out, &archive)?;
    Ok(archive)
}

/// Acceptance rates with per-site families such as `r1..rN` folded into a
/// min/max range.
fn acceptance_groups(rates: &[(String, f64)]) -> Vec<String> {
    let mut groups: Vec<(&str, Vec<f64>)> = Vec::new();
    for (name, r) in rates {
        let stem = name.trim_end_matches(|c: char| c.is_ascii_digit());
        let key = if stem.len() < name.len() && !stem.is_empty() { stem } else { name.as_str() };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(*r),
            None => groups.push((key, vec![*r])),
        }
    }
    groups
        .into_iter()
        .map(|(k, v)| match v.as_slice() {
            [one] => format!("{k}={}", sig6(*one)),
            _ => {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                format!("{k}[{}]={}..{}", v.len(), sig6(lo), sig6(hi))
            }
        })
        .collect()
}

pub fn print_fit(out: &mut dyn Write, archive: &PosteriorArchive) -> io::Result<()> {
    let m = &archive.manifest;
    writeln!(out, "model {}: {} chains x {} retained draws", m.model, m.chains.len(), m.draws_per_chain)?;
    if m.psrf.is_empty() {
        writeln!(out, "PSRF unavailable (needs at least 2 chains of 10 draws)")?;
    } else {
        writeln!(out, "{:<12}{}", "parameter", "psrf")?;
        for (name, v) in &m.psrf {
            writeln!(out, "{name:<12}{}", v.map_or_else(|| "inf".to_string(), sig6))?;
        }
    }
    for (c, chain) in m.chains.iter().enumerate() {
        let rates = acceptance_groups(&chain.acceptance);
        writeln!(out, "chain {c} (seed {}) acceptance: {}", chain.seed, rates.join(" "))?;
        for (name, count) in chain.counters.iter().chain(&chain.nan_rejections).filter(|(_, c)| *c > 0) {
            writeln!(out, "chain {c} {name}: {count}")?;
        }
    }
    match converged(&m.psrf) {
        Some(true) => writeln!(out, "converged: all PSRF < {PSRF_THRESHOLD}"),
        Some(false) => writeln!(out, "NOT converged: some PSRF >= {PSRF_THRESHOLD}"),
        None => Ok(()),
    }
}

// -------------------------------------------------------------------- krig

/// Reorders `data` to `ids`, or lists the ids found on only one side.
pub fn align_sites(data: &SiteTable, ids: &[String]) -> CliResult<SiteTable> {
    let pos: HashMap<&str, usize> = data.ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let missing: Vec<&str> = ids.iter().map(String::as_str).filter(|s| !pos.contains_key(s)).collect();
    let extra: Vec<&str> = if ids.len() == data.len() && missing.is_empty() {
        Vec::new()
    } else {
        let want: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        data.ids().iter().map(String::as_str).filter(|s| !want.contains(s)).collect()
    };
    if !missing.is_empty() || !extra.is_empty() {
        let mut msg = String::from("data sites do not match the archive");
        if !missing.is_empty() {
            msg += &format!("; in archive only: {}", missing.join(", "));
        }
        if !extra.is_empty() {
            msg += &format!("; in data only: {}", extra.join(", "));
        }
        return Err(validation(msg));
    }
    let idx: Vec<usize> = ids.iter().map(|s| pos[s.as_str()]).collect();
    Ok(data.subset(&idx))
}

pub fn krig_posterior(post: &Posterior, data: &SiteTable, targets: &[(f64, f64)], seed: u64) -> CliResult<Vec<KrigResult>> {
    Ok(match post {
        Posterior::Wrapped(p) => wrap_krig(p, data, targets, seed)?,
        Posterior::Projected(p) => proj_krig(p, data, targets, seed)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigRequest {
    pub archive: PathBuf,
    /// Defaults to the archive's configured data path.
    pub data: Option<PathBuf>,
    pub targets: PathBuf,
    /// Kriging type the caller expects; checked against the archive.
    pub model: Option<ModelKind>,
    /// Defaults to the archive's `krig_seed`.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigOutput {
    pub target_ids: Vec<String>,
    pub results: Vec<KrigResult>,
}

pub fn cmd_krig(req: &KrigRequest) -> CliResult<KrigOutput> {
    let archive = read_archive(&req.archive)?;
    if let Some(m) = req.model.filter(|&m| m != archive.manifest.model) {
        return Err(validation(format!("requested {m} kriging but the archive holds a {} fit", archive.manifest.model)));
    }
    let cfg = archive.config()?;
    let data_path = req.data.as_deref().map_or_else(|| cfg.data_path(), Ok)?;
    let (data, proj) = read_sites_projected(data_path, cfg.format, cfg.direction_unit)?;
    let data = align_sites(&data, &archive.manifest.site_ids)?;
    let Targets { ids, coords } = read_targets(&req.targets, &proj)?;
    let results = krig_posterior(&archive.posterior, &data, &coords, req.seed.unwrap_or(cfg.krig_seed))?;
    Ok(KrigOutput { target_ids: ids, results })
}

pub const PREDICTION_COLUMNS: [&str; 4] = ["target_id", "direction_rad", "direction_deg", "concentration"];

pub fn write_predictions<W: Write>(out: W, k: &KrigOutput) -> csv::Result<()> {
    csv_rows(
        out,
        &PREDICTION_COLUMNS,
        k.target_ids.iter().zip(&k.results).map(|(id, r)| {
            vec![id.clone(), sig6(r.direction.radians()), sig6(r.direction.degrees()), sig6(r.concentration)]
        }),
    )
}

/// Long-format predictive draws: one row per target and draw.
pub fn write_predictive_draws<W: Write>(out: W, k: &KrigOutput) -> csv::Result<()> {
    csv_rows(
        out,
        &["target_id", "draw", "direction_rad"],
        k.target_ids.iter().zip(&k.results).flat_map(|(id, r)| {
            r.predictive_draws.iter().enumerate().map(move |(i, a)| vec![id.clone(), i.to_string(), sig6(a.radians())])
        }),
    )
}

pub fn write_krig_outputs(out: &Path, draws_out: Option<&Path>, k: &KrigOutput) -> CliResult<()> {
    write_csv(out, |buf| write_predictions(buf, k))?;
    if let Some(path) = draws_out {
        write_csv(path, |buf| write_predictive_draws(buf, k))?;
    }
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub model: ModelKind,
    pub split_seed: u64,
    pub n_valid: usize,
    pub report: EvalReport,
    pub psrf: Vec<(String, f64)>,
}

/// Fits on `train` and scores kriging predictions at the `valid` sites.
pub fn evaluate_holdout(cfg: &RunConfig, train: &SiteTable, valid: &SiteTable) -> CliResult<(EvalReport, Posterior)> {
    let post = fit_posterior(cfg, train)?;
    let preds = krig_posterior(&post, train, &valid.coords(), cfg.krig_seed)?;
    Ok((evaluate(valid, &preds, cfg.distance, cfg.krig_seed)?, post))
}

/// Splits the configured data with `split_seed`, refits on the training
/// part and scores the held-out sites.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<EvalOutcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    if cfg.n_valid >= data.len() {
        return Err(validation(format!("n_valid ({}) must be less than the number of sites ({})", cfg.n_valid, data.len())));
    }
    let (train, valid) = holdout_split(&data, cfg.n_valid, cfg.split_seed)?;
    let (report, post) = evaluate_holdout(cfg, &train, &valid)?;
    Ok(EvalOutcome { model: cfg.model, split_seed: cfg.split_seed, n_valid: cfg.n_valid, report, psrf: post.psrf() })
}

pub fn print_eval(out: &mut dyn Write, e: &EvalOutcome) -> io::Result<()> {
    writeln!(
        out,
        "model {} split_seed {} n_valid {}: APE {} CRPS {}",
        e.model,
        e.split_seed,
        e.n_valid,
        sig6(e.report.ape),
        sig6(e.report.crps)
    )?;
    if let Some(bad) = e.psrf.iter().find(|(_, v)| !(*v < PSRF_THRESHOLD)) {
        writeln!(out, "warning: training fit PSRF {} = {} >= {PSRF_THRESHOLD}", bad.0, sig6(bad.1))?;
    }
    Ok(())
}

pub fn write_eval_summary<W: Write>(out: W, e: &EvalOutcome) -> csv::Result<()> {
    csv_rows(
        out,
        &["model", "split_seed", "n_valid", "ape", "crps"],
        [vec![
            e.model.to_string(),
            e.split_seed.to_string(),
            e.n_valid.to_string(),
            sig6(e.report.ape),
            sig6(e.report.crps),
        ]],
    )
}

pub fn write_eval_sites<W: Write>(out: W, e: &EvalOutcome) -> csv::Result<()> {
    csv_rows(
        out,
        &["split_seed", "site_id", "truth_rad", "predicted_rad", "circ_error"],
        e.report.per_site.iter().map(|s| {
            vec![
                e.split_seed.to_string(),
                s.site_id.clone(),
                sig6(s.truth.radians()),
                sig6(s.predicted.radians()),
                sig6(s.circ_error),
            ]
        }),
    )
}

pub fn write_eval_outputs(out: &Path, sites_out: Option<&Path>, e: &EvalOutcome) -> CliResult<()> {
    write_csv(out, |buf| write_eval_summary(buf, e))?;
    if let Some(path) = sites_out {
        write_csv(path, |buf| write_eval_sites(buf, e))?;
    }
    Ok(())
}

