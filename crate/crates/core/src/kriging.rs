//! Posterior predictive directions at unobserved locations.
//!
//! Each retained posterior draw conditions the latent Gaussian field on the
//! observed sites; targets are kriged one at a time.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::circular::{atan2_star, circ_mean, circ_resultant, Angle};
use crate::error::{invalid, Error, Result};
use crate::mcmc::ChainRng;
use crate::pgsp::{PgspDraw, PgspPosterior, Sym2};
use crate::spatial::linalg::{dot, CovarianceFactor};
use crate::spatial::{corr_matrix, corr_vector, euclid, DistanceMatrix, SiteTable};
use crate::wgsp::{WgspDraw, WgspPosterior};

/// Targets closer than this (km) to an observed site reproduce its direction.
pub const EXACT_RADIUS_KM: f64 = 1e-3;

/// Predictive summary at one target.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigResult {
    pub direction: Angle<f64>,
    /// Resultant length of the predictive distribution, in `[0, 1]`.
    pub concentration: f64,
    /// Mean cosine component of the predictive distribution.
    pub g_c: f64,
    /// Mean sine component of the predictive distribution.
    pub g_s: f64,
    /// One draw per retained posterior draw.
    pub predictive_draws: Vec<Angle<f64>>,
}

fn nearest_site(coords: &[(f64, f64)], target: (f64, f64)) -> Option<usize> {
    coords.iter().position(|&c| euclid(c, target) < EXACT_RADIUS_KM)
}

fn check_targets(targets: &[(f64, f64)]) -> Result<()> {
    match targets.iter().position(|(x, y)| !(x.is_finite() && y.is_finite())) {
        Some(i) => Err(invalid(format!("target {i} has a non-finite coordinate"))),
        None => Ok(()),
    }
}

fn target_rng(seed: u64, target: usize) -> ChainRng {
    let mut rng = ChainRng::seed_from_u64(seed);
    rng.set_stream(target as u64 + 1);
    rng
}

fn exact_result(x: Angle<f64>, draws: usize) -> KrigResult {
    let (c, s) = x.embedding();
    KrigResult { direction: x, concentration: 1.0, g_c: c, g_s: s, predictive_draws: vec![x; draws] }
}

/// Conditional mean and variance of the unwrapped field at `target` given the
/// observed unwrapped values under one posterior draw.
pub fn wrap_conditional(
    draw: &WgspDraw,
    data: &SiteTable<f64>,
    factor: &CovarianceFactor<f64>,
    target: (f64, f64),
) -> Result<(f64, f64)> {
    let rho0 = corr_vector(&data.coords(), target, draw.phi);
    let w = factor.solve(&rho0)?;
    let mu = draw.mu.radians();
    let resid: Vec<f64> =
        data.directions().iter().zip(&draw.k).map(|(x, &k)| x.radians() + TAU * k as f64 - mu).collect();
    let mean = mu + dot(&w, &resid);
    let var = (draw.sigma2 * (1.0 - dot(&rho0, &w))).max(0.0);
    Ok((mean, var))
}

/// Kriging under the wrapped model. `seed` drives the predictive draws.
pub fn wrap_krig(
    post: &WgspPosterior,
    data: &SiteTable<f64>,
    targets: &[(f64, f64)],
    seed: u64,
) -> Result<Vec<KrigResult>> {
    let draws: Vec<&WgspDraw> = post.draws().collect();
    if draws.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_targets(targets)?;
    if let Some(d) = draws.iter().find(|d| d.k.len() != data.len()) {
        return Err(Error::DimensionMismatch { expected: data.len(), got: d.k.len() });
    }
    let coords = data.coords();
    let dist = data.distance_matrix();
    let b = draws.len();
    let exact: Vec<Option<usize>> = targets.iter().map(|&t| nearest_site(&coords, t)).collect();
    let mut rngs: Vec<ChainRng> = (0..targets.len()).map(|t| target_rng(seed, t)).collect();
    let mut acc = vec![(0.0f64, 0.0f64); targets.len()];
    let mut pred: Vec<Vec<Angle<f64>>> = vec![Vec::with_capacity(b); targets.len()];

    for draw in &draws {
        let factor = CovarianceFactor::new(&corr_matrix(&dist, draw.phi)?)?;
        for (t, &target) in targets.iter().enumerate() {
            if exact[t].is_some() {
                continue;
            }
            let (mean, var) = wrap_conditional(draw, data, &factor, target)?;
            let atten = (-0.5 * var).exp();
            acc[t].0 += atten * mean.cos();
            acc[t].1 += atten * mean.sin();
            let z: f64 = rngs[t].sample(StandardNormal);
            pred[t].push(Angle::wrap_unchecked(mean + var.sqrt() * z));
        }
    }

    let bf = b as f64;
    targets
        .iter()
        .enumerate()
        .map(|(t, _)| {
            if let Some(i) = exact[t] {
                return Ok(exact_result(data.directions()[i], b));
            }
            let (g_c, g_s) = (acc[t].0 / bf, acc[t].1 / bf);
            Ok(KrigResult {
                direction: atan2_star(g_s, g_c)?,
                concentration: g_c.hypot(g_s).min(1.0),
                g_c,
                g_s,
                predictive_draws: std::mem::take(&mut pred[t]),
            })
        })
        .collect()
}

/// Conditional mean and covariance of the bivariate field at `target` given
/// the observed stacked field under one posterior draw.
pub fn proj_conditional(
    draw: &PgspDraw,
    data: &SiteTable<f64>,
    factor: &CovarianceFactor<f64>,
    target: (f64, f64),
) -> Result<([f64; 2], Sym2)> {
    let rho0 = corr_vector(&data.coords(), target, draw.phi);
    let w = factor.solve(&rho0)?;
    let mut mean = draw.mu;
    for ((x, &r), &wi) in data.directions().iter().zip(&draw.r).zip(&w) {
        let (c, s) = x.embedding();
        mean[0] += wi * (r * c - draw.mu[0]);
        mean[1] += wi * (r * s - draw.mu[1]);
    }
    let shrink = (1.0 - dot(&rho0, &w)).max(0.0);
    Ok((mean, draw.params().t_matrix().scale(shrink)))
}

/// Kriging under the projected model. `seed` drives the predictive draws.
pub fn proj_krig(
    post: &PgspPosterior,
    data: &SiteTable<f64>,
    targets: &[(f64, f64)],
    seed: u64,
) -> Result<Vec<KrigResult>> {
    let draws: Vec<&PgspDraw> = post.draws().collect();
    if draws.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_targets(targets)?;
    if let Some(d) = draws.iter().find(|d| d.r.len() != data.len()) {
        return Err(Error::DimensionMismatch { expected: data.len(), got: d.r.len() });
    }
    let coords = data.coords();
    let dist: DistanceMatrix<f64> = data.distance_matrix();
    let b = draws.len();
    let exact: Vec<Option<usize>> = targets.iter().map(|&t| nearest_site(&coords, t)).collect();
    let mut rngs: Vec<ChainRng> = (0..targets.len()).map(|t| target_rng(seed, t)).collect();
    let mut pred: Vec<Vec<Angle<f64>>> = vec![Vec::with_capacity(b); targets.len()];

    for draw in &draws {
        let factor = CovarianceFactor::new(&corr_matrix(&dist, draw.phi)?)?;
        for (t, &target) in targets.iter().enumerate() {
            if exact[t].is_some() {
                continue;
            }
            let (mean, cov) = proj_conditional(draw, data, &factor, target)?;
            let z0: f64 = rngs[t].sample(StandardNormal);
            let z1: f64 = rngs[t].sample(StandardNormal);
            let (y0, y1) = match cov.cholesky() {
                Ok([l11, l21, l22]) => (mean[0] + l11 * z0, mean[1] + l21 * z0 + l22 * z1),
                // Conditional covariance vanished: the field is known exactly.
                Err(_) => (mean[0], mean[1]),
            };
            pred[t].push(atan2_star(y1, y0).or_else(|_| atan2_star(mean[1], mean[0]))?);
        }
    }

    (0..targets.len())
        .map(|t| {
            if let Some(i) = exact[t] {
                return Ok(exact_result(data.directions()[i], b));
            }
            let draws = std::mem::take(&mut pred[t]);
            let n = draws.len() as f64;
            let (c, s) = draws.iter().fold((0.0, 0.0), |(c, s), a| {
                let (ca, sa) = a.embedding();
                (c + ca, s + sa)
            });
            Ok(KrigResult {
                direction: circ_mean(&draws)?,
                concentration: circ_resultant(&draws)?,
                g_c: c / n,
                g_s: s / n,
                predictive_draws: draws,
            })
        })
        .collect()
}
