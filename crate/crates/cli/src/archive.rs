//! Posterior-sample archives.
//!
//! An archive is a directory holding `manifest.json` (model, config snapshot,
//! seeds, acceptance rates, PSRF) and plain CSV tables:
//!
//! * `<param>.csv`: one column per chain (`draw,chain_0,chain_1,…`);
//! * `k_chain_<c>.csv` or `r_chain_<c>.csv`: latent winding numbers or
//!   radii, one column per site;
//! * `scales_chain_<c>.csv`: proposal log-scales at each adaptation batch.
//!
//! Floats are written in shortest round-trip form, so reading and rewriting
//! an archive reproduces it byte for byte. Writes go to a sibling temporary
//! directory that is renamed into place only when complete.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use circgp::Angle;
use circgp::mcmc::{ChainOutput, ScaleSnapshot};
use circgp::pgsp::{PgspDraw, PGSP_PARAMS};
use circgp::wgsp::{WgspDraw, WGSP_PARAMS};
use circgp::{PgspPosterior, WgspPosterior};

use crate::config::{ModelKind, RunConfig};
use crate::error::{validation, CliError, CliResult};
use crate::format::exact;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    /// Post-burnin acceptance rate per adapted update.
    pub acceptance: Vec<(String, f64)>,
    pub nan_rejections: Vec<(String, u64)>,
    pub counters: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelKind,
    pub config: BTreeMap<String, String>,
    pub site_ids: Vec<String>,
    pub draws_per_chain: usize,
    pub chains: Vec<ChainMeta>,
    /// `null` marks an infinite PSRF; empty when fewer than two chains of
    /// ten draws were run.
    pub psrf: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    Wrapped(WgspPosterior),
    Projected(PgspPosterior),
}

impl Posterior {
    pub fn model(&self) -> ModelKind {
        match self {
            Posterior::Wrapped(_) => ModelKind::Wrapped,
            Posterior::Projected(_) => ModelKind::Projected,
        }
    }

    /// PSRF per monitored quantity; empty when it cannot be computed.
    pub fn psrf(&self) -> Vec<(String, f64)> {
        let r = match self {
            Posterior::Wrapped(p) => p.psrf(),
            Posterior::Projected(p) => p.psrf(),
        };
        r.unwrap_or_default()
    }

    fn chain_meta(&self) -> Vec<ChainMeta> {
        fn meta<D>(c: &ChainOutput<D>) -> ChainMeta {
            ChainMeta {
                seed: c.seed,
                acceptance: c.acceptance.clone(),
                nan_rejections: c.nan_rejections.clone(),
                counters: c.counters.clone(),
            }
        }
        match self {
            Posterior::Wrapped(p) => p.chains.iter().map(meta).collect(),
            Posterior::Projected(p) => p.chains.iter().map(meta).collect(),
        }
    }

    fn draws_per_chain(&self) -> usize {
        match self {
            Posterior::Wrapped(p) => p.chains.first().map_or(0, |c| c.draws.len()),
            Posterior::Projected(p) => p.chains.first().map_or(0, |c| c.draws.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorArchive {
    pub manifest: Manifest,
    pub posterior: Posterior,
}

impl PosteriorArchive {
    pub fn new(posterior: Posterior, config: &RunConfig, site_ids: &[String]) -> Self {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model: posterior.model(),
            config: config.snapshot(),
            site_ids: site_ids.to_vec(),
            draws_per_chain: posterior.draws_per_chain(),
            chains: posterior.chain_meta(),
            psrf: posterior
                .psrf()
                .into_iter()
                .map(|(k, v)| (k, v.is_finite().then_some(v)))
                .collect(),
        };
        PosteriorArchive { manifest, posterior }
    }

    pub fn config(&self) -> CliResult<RunConfig> {
        RunConfig::from_snapshot(&self.manifest.config)
    }
}

/// Named files and their contents.
type Files = Vec<(String, String)>;

fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of UTF-8 fields")
}

fn param_table<D>(chains: &[ChainOutput<D>], get: impl Fn(&D) -> String) -> String {
    let mut header = vec!["draw".to_string()];
    header.extend((0..chains.len()).map(|c| format!("chain_{c}")));
    let n = chains.first().map_or(0, |c| c.draws.len());
    csv_text(
        &header,
        (0..n).map(|i| std::iter::once(i.to_string()).chain(chains.iter().map(|c| get(&c.draws[i]))).collect()),
    )
}

fn latent_table<D>(chain: &ChainOutput<D>, site_ids: &[String], get: impl Fn(&D) -> Vec<String>) -> String {
    let mut header = vec!["draw".to_string()];
    header.extend(site_ids.iter().cloned());
    csv_text(
        &header,
        chain.draws.iter().enumerate().map(|(i, d)| std::iter::once(i.to_string()).chain(get(d)).collect()),
    )
}

fn scale_table<D>(chain: &ChainOutput<D>) -> String {
    let mut header = vec!["iter".to_string()];
    header.extend(chain.acceptance.iter().map(|(n, _)| n.clone()));
    csv_text(
        &header,
        chain
            .scale_history
            .iter()
            .map(|s| std::iter::once(s.iter.to_string()).chain(s.log_sd.iter().map(|&v| exact(v))).collect()),
    )
}

fn chain_files<D>(chains: &[ChainOutput<D>], latent: &str, ids: &[String], get: impl Fn(&D) -> Vec<String>) -> Files {
    let mut files = Files::new();
    for (c, chain) in chains.iter().enumerate() {
        files.push((format!("{latent}_chain_{c}.csv"), latent_table(chain, ids, &get)));
        files.push((format!("scales_chain_{c}.csv"), scale_table(chain)));
    }
    files
}

fn render(archive: &PosteriorArchive) -> CliResult<Files> {
    let manifest = serde_json::to_string_pretty(&archive.manifest)
        .map_err(|e| CliError::Numerical(format!("cannot serialise manifest: {e}")))?;
    let mut files: Files = vec![(MANIFEST.to_string(), manifest + "\n")];
    let ids = &archive.manifest.site_ids;
    match &archive.posterior {
        Posterior::Wrapped(p) => {
            let getters: [fn(&WgspDraw) -> f64; 3] = [|d| d.mu.radians(), |d| d.sigma2, |d| d.phi];
            for (name, get) in WGSP_PARAMS.iter().zip(getters) {
                files.push((format!("{name}.csv"), param_table(&p.chains, |d| exact(get(d)))));
            }
            files.extend(chain_files(&p.chains, "k", ids, |d| d.k.iter().map(i32::to_string).collect()));
        }
        Posterior::Projected(p) => {
            let getters: [fn(&PgspDraw) -> f64; 5] = [|d| d.mu[0], |d| d.mu[1], |d| d.tau2, |d| d.rho, |d| d.phi];
            for (name, get) in PGSP_PARAMS.iter().zip(getters) {
                files.push((format!("{name}.csv"), param_table(&p.chains, |d| exact(get(d)))));
            }
            files.extend(chain_files(&p.chains, "r", ids, |d| d.r.iter().map(|&v| exact(v)).collect()));
        }
    }
    Ok(files)
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir.file_name().map_or_else(|| "archive".into(), |n| n.to_string_lossy().into_owned());
    dir.with_file_name(format!(".{name}.{tag}-{}", std::process::id()))
}

/// Writes `archive` to `dir`, replacing an earlier archive there.
pub fn write_archive(dir: &Path, archive: &PosteriorArchive) -> CliResult<()> {
    let files = render(archive)?;
    if dir.exists() && !dir.join(MANIFEST).is_file() {
        return Err(validation(format!(
            "{}: exists and is not an archive; refusing to overwrite",
            dir.display()
        )));
    }
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let tmp = sibling(dir, "tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(CliError::io(&tmp))?;
    }
    fs::create_dir(&tmp).map_err(CliError::io(&tmp))?;
    let written = files.iter().try_for_each(|(name, body)| {
        let path = tmp.join(name);
        fs::write(&path, body).map_err(CliError::io(&path))
    });
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        let old = sibling(dir, "old");
        fs::rename(dir, &old).map_err(CliError::io(dir))?;
        fs::rename(&tmp, dir).map_err(CliError::io(dir))?;
        fs::remove_dir_all(&old).map_err(CliError::io(&old))?;
    } else {
        fs::rename(&tmp, dir).map_err(CliError::io(dir))?;
    }
    Ok(())
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(dir: &Path, name: &str, width: usize, rows: Option<usize>) -> CliResult<Table> {
    let path = dir.join(name);
    let bad = |msg: String| validation(format!("archive {}: {msg}", path.display()));
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    if header.len() != width {
        return Err(bad(format!("expected {width} columns, found {}", header.len())));
    }
    let body = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()).map_err(|e| bad(e.to_string())))
        .collect::<CliResult<Vec<Vec<String>>>>()?;
    if let Some(n) = rows.filter(|&n| n != body.len()) {
        return Err(bad(format!("expected {n} rows, found {}", body.len())));
    }
    Ok(Table { header, rows: body })
}

fn parse_num<T: std::str::FromStr>(s: &str, file: &str) -> CliResult<T> {
    s.parse().map_err(|_| validation(format!("archive {file}: cannot parse `{s}`")))
}

/// Per-chain columns of one parameter table.
fn param_columns(dir: &Path, name: &str, n_chains: usize, n: usize) -> CliResult<Vec<Vec<f64>>> {
    let file = format!("{name}.csv");
    let t = read_table(dir, &file, n_chains + 1, Some(n))?;
    (0..n_chains)
        .map(|c| t.rows.iter().map(|row| parse_num(&row[c + 1], &file)).collect())
        .collect()
}

/// Rebuilds every chain; `build(chain, draw, latent_row)` assembles one draw.
fn read_chains<D>(
    dir: &Path,
    m: &Manifest,
    latent: &str,
    build: impl Fn(usize, usize, &[String]) -> CliResult<D>,
) -> CliResult<Vec<ChainOutput<D>>> {
    let n = m.draws_per_chain;
    m.chains
        .iter()
        .enumerate()
        .map(|(c, meta)| {
            let lat_file = format!("{latent}_chain_{c}.csv");
            let lat = read_table(dir, &lat_file, m.site_ids.len() + 1, Some(n))?;
            if lat.header[1..] != m.site_ids[..] {
                return Err(validation(format!("archive {lat_file}: site columns differ from the manifest")));
            }
            let draws = lat.rows.iter().enumerate().map(|(i, row)| build(c, i, &row[1..])).collect::<CliResult<_>>()?;
            let sc_file = format!("scales_chain_{c}.csv");
            let sc = read_table(dir, &sc_file, meta.acceptance.len() + 1, None)?;
            let scale_history = sc
                .rows
                .iter()
                .map(|row| {
                    Ok(ScaleSnapshot {
                        iter: parse_num(&row[0], &sc_file)?,
                        log_sd: row[1..].iter().map(|v| parse_num(v, &sc_file)).collect::<CliResult<_>>()?,
                    })
                })
                .collect::<CliResult<_>>()?;
            Ok(ChainOutput {
                seed: meta.seed,
                draws,
                acceptance: meta.acceptance.clone(),
                nan_rejections: meta.nan_rejections.clone(),
                counters: meta.counters.clone(),
                scale_history,
            })
        })
        .collect()
}

/// Reads an archive written by [`write_archive`].
pub fn read_archive(dir: &Path) -> CliResult<PosteriorArchive> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(CliError::io(&mpath))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| validation(format!("archive {}: {e}", mpath.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(validation(format!(
            "archive {}: unsupported format version {}",
            mpath.display(),
            manifest.format_version
        )));
    }
    let config = RunConfig::from_snapshot(&manifest.config)?;
    let (k, n) = (manifest.chains.len(), manifest.draws_per_chain);
    let posterior = match manifest.model {
        ModelKind::Wrapped => {
            let cols: Vec<Vec<Vec<f64>>> =
                WGSP_PARAMS.iter().map(|p| param_columns(dir, p, k, n)).collect::<CliResult<_>>()?;
            let chains = read_chains(dir, &manifest, "k", |c, i, row| {
                Ok(WgspDraw {
                    mu: Angle::new(cols[0][c][i])?,
                    sigma2: cols[1][c][i],
                    phi: cols[2][c][i],
                    k: row.iter().map(|v| parse_num(v, "k")).collect::<CliResult<_>>()?,
                })
            })?;
            Posterior::Wrapped(WgspPosterior { chains, priors: config.wgsp })
        }
        ModelKind::Projected => {
            let cols: Vec<Vec<Vec<f64>>> =
                PGSP_PARAMS.iter().map(|p| param_columns(dir, p, k, n)).collect::<CliResult<_>>()?;
            let chains = read_chains(dir, &manifest, "r", |c, i, row| {
                Ok(PgspDraw {
                    mu: [cols[0][c][i], cols[1][c][i]],
                    tau2: cols[2][c][i],
                    rho: cols[3][c][i],
                    phi: cols[4][c][i],
                    r: row.iter().map(|v| parse_num(v, "r")).collect::<CliResult<_>>()?,
                })
            })?;
            Posterior::Projected(PgspPosterior { chains, priors: config.pgsp })
        }
    };
    Ok(PosteriorArchive { manifest, posterior })
}
