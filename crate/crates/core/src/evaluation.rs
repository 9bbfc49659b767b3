//! Holdout construction and predictive scores for directions.

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::circular::{Angle, CircDistance};
use crate::error::{invalid, Error, Result};
use crate::kriging::KrigResult;
use crate::mcmc::ChainRng;
use crate::scalar::Scalar;
use crate::spatial::SiteTable;

/// Largest ensemble scored exhaustively under a distance without a closed-form
/// pairwise term.
pub const MAX_PAIRWISE_DRAWS: usize = 20_000;

/// Random train/validation partition; both halves keep the input order.
pub fn holdout_split<T: Scalar>(
    data: &SiteTable<T>,
    n_valid: usize,
    seed: u64,
) -> Result<(SiteTable<T>, SiteTable<T>)> {
    let n = data.len();
    if n_valid == 0 || n_valid >= n {
        return Err(invalid(format!("validation size must be in 1..{n}, got {n_valid}")));
    }
    let mut rng = ChainRng::seed_from_u64(seed);
    let mut valid: Vec<usize> = sample(&mut rng, n, n_valid).into_vec();
    valid.sort_unstable();
    let mut is_valid = vec![false; n];
    for &i in &valid {
        is_valid[i] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&i| !is_valid[i]).collect();
    Ok((data.subset(&train), data.subset(&valid)))
}

/// Mean `1 − cos` distance between paired predictions and truths.
pub fn ape<T: Scalar>(predicted: &[Angle<T>], truth: &[Angle<T>]) -> Result<T> {
    if predicted.len() != truth.len() {
        return Err(invalid(format!(
            "{} predictions for {} observations",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total = predicted.iter().zip(truth).map(|(&p, &t)| CircDistance::OneMinusCos.eval(p, t)).sum::<T>();
    Ok(total / T::from_usize_lossy(truth.len()))
}

/// Kernel score `mean_b d(x_b, y) − ½ mean_{b,b'} d(x_b, x_b')` of one ensemble.
///
/// Under `1 − cos` the pairwise mean equals `1 − R̄²` exactly, so every draw is
/// used. Under arc length ensembles above [`MAX_PAIRWISE_DRAWS`] are
/// subsampled with `seed` for the pairwise term.
pub fn crps_site<T: Scalar>(draws: &[Angle<T>], truth: Angle<T>, dist: CircDistance, seed: u64) -> Result<T> {
    if draws.len() < 2 {
        return Err(invalid(format!("CRPS needs at least 2 draws, got {}", draws.len())));
    }
    let b = T::from_usize_lossy(draws.len());
    let first = draws.iter().map(|&x| dist.eval(x, truth)).sum::<T>() / b;
    let spread = match dist {
        CircDistance::OneMinusCos => {
            let (c, s) = draws.iter().fold((T::zero(), T::zero()), |(c, s), a| {
                let (ca, sa) = a.embedding();
                (c + ca, s + sa)
            });
            let (c, s) = (c / b, s / b);
            T::one() - (c * c + s * s)
        }
        CircDistance::ArcLength => {
            let pool: Vec<Angle<T>> = if draws.len() > MAX_PAIRWISE_DRAWS {
                let mut rng = ChainRng::seed_from_u64(seed);
                sample(&mut rng, draws.len(), MAX_PAIRWISE_DRAWS).into_iter().map(|i| draws[i]).collect()
            } else {
                draws.to_vec()
            };
            pairwise_mean(&pool, dist)
        }
    };
    Ok((first - T::lit(0.5) * spread).max(T::zero()))
}

/// `mean_{b,b'} d(x_b, x_b')` over all ordered pairs, diagonal included.
pub fn pairwise_mean<T: Scalar>(draws: &[Angle<T>], dist: CircDistance) -> T {
    let mut total = T::zero();
    for (i, &a) in draws.iter().enumerate() {
        for &b in &draws[i + 1..] {
            total = total + dist.eval(a, b);
        }
    }
    let n = T::from_usize_lossy(draws.len());
    T::lit(2.0) * total / (n * n)
}

/// Mean over sites of [`crps_site`] under `1 − cos`.
pub fn crps_circ<T: Scalar>(predictive_draws: &[Vec<Angle<T>>], truth: &[Angle<T>]) -> Result<T> {
    crps_circ_with(predictive_draws, truth, CircDistance::OneMinusCos, 0)
}

/// Mean over sites of [`crps_site`] under `dist`.
pub fn crps_circ_with<T: Scalar>(
    predictive_draws: &[Vec<Angle<T>>],
    truth: &[Angle<T>],
    dist: CircDistance,
    seed: u64,
) -> Result<T> {
    if predictive_draws.len() != truth.len() {
        return Err(invalid(format!(
            "{} predictive ensembles for {} observations",
            predictive_draws.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = T::zero();
    for (i, (draws, &t)) in predictive_draws.iter().zip(truth).enumerate() {
        total = total + crps_site(draws, t, dist, seed.wrapping_add(i as u64))?;
    }
    Ok(total / T::from_usize_lossy(truth.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteError {
    pub site_id: String,
    pub truth: Angle<f64>,
    pub predicted: Angle<f64>,
    /// `1 − cos(predicted − truth)`.
    pub circ_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ape: f64,
    pub crps: f64,
    pub per_site: Vec<SiteError>,
    /// Whether any site's pairwise CRPS term used a subsample.
    pub subsampled: bool,
}

/// Scores kriging output against the validation directions, site by site.
pub fn evaluate(valid: &SiteTable<f64>, predictions: &[KrigResult], dist: CircDistance, seed: u64) -> Result<EvalReport> {
    if predictions.len() != valid.len() {
        return Err(invalid(format!("{} predictions for {} validation sites", predictions.len(), valid.len())));
    }
    let truth = valid.directions();
    let predicted: Vec<Angle<f64>> = predictions.iter().map(|p| p.direction).collect();
    let ensembles: Vec<Vec<Angle<f64>>> = predictions.iter().map(|p| p.predictive_draws.clone()).collect();
    let per_site = valid
        .ids()
        .iter()
        .zip(truth)
        .zip(&predicted)
        .map(|((id, &t), &p)| SiteError {
            site_id: id.clone(),
            truth: t,
            predicted: p,
            circ_error: CircDistance::OneMinusCos.eval(p, t),
        })
        .collect();
    Ok(EvalReport {
        ape: ape(&predicted, truth)?,
        crps: crps_circ_with(&ensembles, truth, dist, seed)?,
        per_site,
        subsampled: dist == CircDistance::ArcLength && ensembles.iter().any(|e| e.len() > MAX_PAIRWISE_DRAWS),
    })
}
