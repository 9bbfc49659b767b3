//! Run configuration: a flat `key = value` text file.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default, so an empty file is a valid wrapped-model configuration (minus the
//! data path). `CIRCGP_SEED` and `CIRCGP_THREADS` override `seed` and
//! `threads`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use circgp::circular::{wrap, CircDistance};
use circgp::{ChainConfig, PgspPriors, WgspPriors};

use crate::error::{validation, CliError, CliResult};
use crate::format::exact;

pub const SEED_ENV: &str = "CIRCGP_SEED";
pub const THREADS_ENV: &str = "CIRCGP_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Wrapped,
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordFormat {
    /// Easting/northing in metres.
    #[default]
    UtmM,
    /// Longitude/latitude in degrees.
    LonLatDeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DirectionUnit {
    #[default]
    Deg,
    Rad,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:expr => $word:literal),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($word => Ok($variant),)+
                    _ => Err(format!(
                        concat!("unknown ", $what, " `{}` (expected one of: {})"),
                        s,
                        [$($word),+].join(", ")
                    )),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let word = match *self {
                    $(v if v == $variant => $word,)+
                    _ => unreachable!(),
                };
                f.write_str(word)
            }
        }
    };
}

keyword_enum!(ModelKind, "model", ModelKind::Wrapped => "wrapped", ModelKind::Projected => "projected");
keyword_enum!(CoordFormat, "coordinate format", CoordFormat::UtmM => "utm_m", CoordFormat::LonLatDeg => "lonlat_deg");
keyword_enum!(DirectionUnit, "direction unit", DirectionUnit::Deg => "deg", DirectionUnit::Rad => "rad");

/// Site placement for simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// Regular grid of cell centres.
    #[default]
    Grid,
    /// Independent uniform draws.
    Random,
}

keyword_enum!(Layout, "layout", Layout::Grid => "grid", Layout::Random => "random");

/// Parses and prints [`CircDistance`] as a config word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DistanceOption(pub CircDistance);

keyword_enum!(
    DistanceOption,
    "distance",
    DistanceOption(CircDistance::OneMinusCos) => "one_minus_cos",
    DistanceOption(CircDistance::ArcLength) => "arc_length",
);

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: CoordFormat,
    pub direction_unit: DirectionUnit,
    /// Distance used by CRPS.
    pub distance: CircDistance,
    pub chain: ChainConfig,
    pub wgsp: WgspPriors,
    pub pgsp: PgspPriors,
    pub n_valid: usize,
    pub split_seed: u64,
    /// Seed for predictive kriging draws.
    pub krig_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::default(),
            data: None,
            output: None,
            format: CoordFormat::default(),
            direction_unit: DirectionUnit::default(),
            distance: CircDistance::default(),
            chain: ChainConfig::default(),
            wgsp: WgspPriors::default(),
            pgsp: PgspPriors::default(),
            n_valid: 10,
            split_seed: 1,
            krig_seed: 1,
        }
    }
}

/// Every recognised key, in snapshot order.
pub const KEYS: &[&str] = &[
    "model",
    "data",
    "output",
    "format",
    "direction_unit",
    "distance",
    "n_iter",
    "burnin",
    "thin",
    "n_chains",
    "target_accept",
    "adapt_start",
    "adapt_end",
    "seed",
    "threads",
    "mu_mean",
    "mu_var",
    "sigma2_shape",
    "sigma2_rate",
    "k_max",
    "phi_lo",
    "phi_hi",
    "mu1_mean",
    "mu2_mean",
    "mu_cov11",
    "mu_cov12",
    "mu_cov22",
    "tau2_shape",
    "tau2_rate",
    "n_valid",
    "split_seed",
    "krig_seed",
];

/// Keys that do not affect results and stay out of archive snapshots.
const UNRECORDED: &[&str] = &["output", "threads"];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse `{value}` as a number"))
}

impl RunConfig {
    /// Parses config text; later lines may not repeat a key.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| validation(format!("config line {line_no}: expected `key = value`")))?;
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(validation(format!("config line {line_no}: `{key}` already set on line {prev}")));
            }
            cfg.set(key, value.trim()).map_err(|e| validation(format!("config line {line_no}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let c = &mut self.chain;
        let w = &mut self.wgsp;
        let p = &mut self.pgsp;
        match key {
            "model" => self.model = value.parse()?,
            "data" => self.data = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            "format" => self.format = value.parse()?,
            "direction_unit" => self.direction_unit = value.parse()?,
            "distance" => self.distance = value.parse::<DistanceOption>()?.0,
            "n_iter" => c.n_iter = num(key, value)?,
            "burnin" => c.burnin = num(key, value)?,
            "thin" => c.thin = num(key, value)?,
            "n_chains" => c.n_chains = num(key, value)?,
            "target_accept" => c.target_accept = num(key, value)?,
            "adapt_start" => c.adapt_start = num(key, value)?,
            "adapt_end" => c.adapt_end = num(key, value)?,
            "seed" => c.seed = num(key, value)?,
            "threads" => c.threads = num(key, value)?,
            "mu_mean" => w.mu_mean = wrap(num::<f64>(key, value)?).map_err(|e| format!("{key}: {e}"))?,
            "mu_var" => w.mu_var = num(key, value)?,
            "sigma2_shape" => w.sigma2_shape = num(key, value)?,
            "sigma2_rate" => w.sigma2_rate = num(key, value)?,
            "k_max" => w.k_max = num(key, value)?,
            "phi_lo" => {
                w.phi_lo = num(key, value)?;
                p.phi_lo = w.phi_lo;
            }
            "phi_hi" => {
                w.phi_hi = num(key, value)?;
                p.phi_hi = w.phi_hi;
            }
            "mu1_mean" => p.mu_mean[0] = num(key, value)?,
            "mu2_mean" => p.mu_mean[1] = num(key, value)?,
            "mu_cov11" => p.mu_cov.xx = num(key, value)?,
            "mu_cov12" => p.mu_cov.xy = num(key, value)?,
            "mu_cov22" => p.mu_cov.yy = num(key, value)?,
            "tau2_shape" => p.tau2_shape = num(key, value)?,
            "tau2_rate" => p.tau2_rate = num(key, value)?,
            "n_valid" => self.n_valid = num(key, value)?,
            "split_seed" => self.split_seed = num(key, value)?,
            "krig_seed" => self.krig_seed = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies `key=value` overrides such as those given with `--set`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> CliResult<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) =
                o.split_once('=').ok_or_else(|| validation(format!("override `{o}`: expected key=value")))?;
            self.set(key.trim(), value.trim()).map_err(validation)?;
        }
        Ok(())
    }

    /// Applies the seed and thread-count environment overrides, read
    /// through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> CliResult<()> {
        for (var, key) in [(SEED_ENV, "seed"), (THREADS_ENV, "threads")] {
            if let Some(v) = lookup(var) {
                self.set(key, v.trim()).map_err(|e| validation(format!("{var}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Checks the chain settings and both prior sets before any work starts.
    pub fn validate(&self) -> CliResult<()> {
        fn field(what: &'static str) -> impl Fn(circgp::Error) -> CliError {
            move |e| validation(format!("config: {what}: {e}"))
        }
        self.chain.validate().map_err(field("chain"))?;
        self.wgsp.validate().map_err(field("wrapped priors"))?;
        self.pgsp.validate().map_err(field("projected priors"))?;
        if self.n_valid == 0 {
            return Err(validation("config: n_valid must be at least 1"));
        }
        Ok(())
    }

    /// The data path, or a validation error naming the missing key.
    pub fn data_path(&self) -> CliResult<&Path> {
        self.data.as_deref().ok_or_else(|| validation("config: `data` is not set"))
    }

    fn value(&self, key: &str) -> Option<String> {
        let c = &self.chain;
        let w = &self.wgsp;
        let p = &self.pgsp;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "model" => self.model.to_string(),
            "data" => return path(&self.data),
            "output" => return path(&self.output),
            "format" => self.format.to_string(),
            "direction_unit" => self.direction_unit.to_string(),
            "distance" => DistanceOption(self.distance).to_string(),
            "n_iter" => c.n_iter.to_string(),
            "burnin" => c.burnin.to_string(),
            "thin" => c.thin.to_string(),
            "n_chains" => c.n_chains.to_string(),
            "target_accept" => exact(c.target_accept),
            "adapt_start" => c.adapt_start.to_string(),
            "adapt_end" => c.adapt_end.to_string(),
            "seed" => c.seed.to_string(),
            "threads" => c.threads.to_string(),
            "mu_mean" => exact(w.mu_mean.radians()),
            "mu_var" => exact(w.mu_var),
            "sigma2_shape" => exact(w.sigma2_shape),
            "sigma2_rate" => exact(w.sigma2_rate),
            "k_max" => w.k_max.to_string(),
            "phi_lo" => exact(w.phi_lo),
            "phi_hi" => exact(w.phi_hi),
            "mu1_mean" => exact(p.mu_mean[0]),
            "mu2_mean" => exact(p.mu_mean[1]),
            "mu_cov11" => exact(p.mu_cov.xx),
            "mu_cov12" => exact(p.mu_cov.xy),
            "mu_cov22" => exact(p.mu_cov.yy),
            "tau2_shape" => exact(p.tau2_shape),
            "tau2_rate" => exact(p.tau2_rate),
            "n_valid" => self.n_valid.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "krig_seed" => self.krig_seed.to_string(),
            _ => return None,
        })
    }

    /// Every result-affecting key with its exact value.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .filter(|k| !UNRECORDED.contains(k))
            .filter_map(|&k| self.value(k).map(|v| (k.to_string(), v)))
            .collect()
    }

    /// Rebuilds a configuration from [`RunConfig::snapshot`] output.
    pub fn from_snapshot(map: &BTreeMap<String, String>) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in map {
            cfg.set(k, v).map_err(|e| validation(format!("config snapshot: {e}")))?;
        }
        Ok(cfg)
    }

    /// The configuration as config-file text.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .filter_map(|&k| self.value(k).map(|v| format!("{k} = {v}\n")))
            .collect()
    }
}
