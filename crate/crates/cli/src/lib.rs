//! Command-line front end for `circgp`: site CSV ingestion, run
//! configuration, posterior archives and the `describe`, `simulate`, `fit`,
//! `krig` and `eval` commands.
//!
//! Report CSVs carry headers and six significant digits; archives and
//! simulation truth files keep full precision.

pub mod archive;
pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod sites;

pub use archive::{read_archive, write_archive, Posterior, PosteriorArchive};
pub use config::{CoordFormat, DirectionUnit, Layout, ModelKind, RunConfig};
pub use error::{CliError, CliResult};
pub use sites::{read_sites, read_targets};

/// Exit status for a fit whose PSRF check failed.
pub const EXIT_NOT_CONVERGED: i32 = 4;
