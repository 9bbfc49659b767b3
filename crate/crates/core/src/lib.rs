//! Bayesian spatial models for directional data.
//!
//! Two latent-Gaussian constructions for angles observed at planar sites:
//! the wrapped process ([`wgsp`]), which reduces a scalar Gaussian field
//! modulo 2π, and the projected process ([`pgsp`]), which takes the direction
//! of a bivariate Gaussian field. Both are fitted by adaptive
//! Metropolis-within-Gibbs ([`mcmc`]) and interpolated by posterior
//! predictive kriging ([`kriging`]); [`evaluation`] scores the predictions.
//!
//! Circular statistics, the dense linear algebra and the closed-form
//! densities are generic over [`Scalar`] (`f32` or `f64`); the samplers work
//! in `f64`.

pub mod circular;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod kriging;
pub mod mcmc;
pub mod pgsp;
pub mod scalar;
pub mod spatial;
pub mod wgsp;

#[cfg(test)]
pub(crate) mod testing;

pub use circular::{atan2_star, circ_dist, circ_mean, circ_median, circ_resultant, deg_to_rad, describe, wrap};
pub use circular::{CircDistance, RoseBin};
pub use error::{Error, Result};
pub use evaluation::{ape, crps_circ, holdout_split, EvalReport};
pub use kriging::{proj_krig, wrap_krig, KrigResult};
pub use mcmc::{psrf, run_chains, AdaptiveScale, ChainConfig, ChainOutput};
pub use pgsp::{fit_pgsp, simulate_pgsp, PgspParams, PgspPosterior, PgspPriors};
pub use scalar::Scalar;
pub use wgsp::{fit_wgsp, simulate_wgsp, WgspParams, WgspPosterior, WgspPriors};

/// Double-precision angle.
pub type Angle = circular::Angle<f64>;
/// Single-precision angle.
pub type Angle32 = circular::Angle<f32>;
pub type SiteTable = spatial::SiteTable<f64>;
pub type SiteTable32 = spatial::SiteTable<f32>;
pub type DistanceMatrix = spatial::DistanceMatrix<f64>;
pub type DistanceMatrix32 = spatial::DistanceMatrix<f32>;
pub type Matrix = spatial::linalg::Matrix<f64>;
pub type Matrix32 = spatial::linalg::Matrix<f32>;
pub type CovarianceFactor = spatial::linalg::CovarianceFactor<f64>;
pub type CovarianceFactor32 = spatial::linalg::CovarianceFactor<f32>;
pub type CircularSummary = circular::CircularSummary<f64>;
pub type CircularSummary32 = circular::CircularSummary<f32>;
