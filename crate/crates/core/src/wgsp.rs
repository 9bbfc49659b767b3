//! Wrapped Gaussian spatial process.
//!
//! Observed directions `x` are a latent Gaussian field `y ~ N(μ1, σ²R(φ))`
//! reduced modulo 2π, with winding numbers `k = (y − x) / 2π` confined to
//! `|k_i| ≤ k_max`. The sampler targets the joint posterior of
//! `(μ, σ², φ, k)` where `μ ∈ [0, 2π)` carries a wrapped normal prior.

use std::f64::consts::TAU;

use rand::Rng;

use crate::circular::{circ_mean, Angle};
use crate::distributions::{
    inverse_gamma, log_normal_mass, log_sum_exp, normal_logpdf, sample_log_weights, truncated_normal,
};
use crate::error::{invalid, Error, Result};
use crate::mcmc::{
    bounded_step, circular_summary, linear_summary, psrf, run_chains, AdaptiveScale, ChainConfig, ChainOutput,
    ChainRng, LogitBounds, ModelKernel, ParamSummary,
};
use crate::scalar::Scalar;
use crate::spatial::linalg::{dot, log_mvn_density, CovarianceFactor, Matrix};
use crate::spatial::{corr_matrix, CorrelationCache, DistanceMatrix, SiteTable};

/// Smallest number of sites accepted by [`fit_wgsp`].
pub const MIN_SITES: usize = 5;

/// Prior variance above which the wrapped normal prior on `μ` is treated as
/// uniform; the deviation is below `e^{−50}`.
const FLAT_WRAPPED_VAR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WgspParams {
    pub mu: Angle<f64>,
    pub sigma2: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WgspState {
    pub params: WgspParams,
    pub k: Vec<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WgspPriors {
    /// Wrapped normal prior on `μ`.
    pub mu_mean: Angle<f64>,
    pub mu_var: f64,
    /// Inverse-gamma prior on `σ²`.
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    /// Uniform prior support of `φ`.
    pub phi_lo: f64,
    pub phi_hi: f64,
    pub k_max: u32,
}

impl Default for WgspPriors {
    /// `μ ~ WN(0, 2)`, `σ² ~ IG(7, 0.5)`, `φ ~ U(0.001, 0.9)`, `k_max = 2`.
    fn default() -> Self {
        WgspPriors {
            mu_mean: Angle::default(),
            mu_var: 2.0,
            sigma2_shape: 7.0,
            sigma2_rate: 0.5,
            phi_lo: 0.001,
            phi_hi: 0.9,
            k_max: 2,
        }
    }
}

impl WgspPriors {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_var > 0.0 && self.mu_var.is_finite()) {
            return Err(invalid(format!("mu_var must be positive, got {}", self.mu_var)));
        }
        if !(self.sigma2_shape > 1.0 && self.sigma2_shape.is_finite()) {
            return Err(invalid(format!("sigma2_shape must exceed 1, got {}", self.sigma2_shape)));
        }
        if !(self.sigma2_rate > 0.0 && self.sigma2_rate.is_finite()) {
            return Err(invalid(format!("sigma2_rate must be positive, got {}", self.sigma2_rate)));
        }
        self.phi_bounds()?;
        if !(self.phi_lo > 0.0) {
            return Err(invalid(format!("phi_lo must be positive, got {}", self.phi_lo)));
        }
        if self.k_max == 0 {
            return Err(invalid("k_max must be at least 1"));
        }
        Ok(())
    }

    pub fn sigma2_prior_mean(&self) -> f64 {
        self.sigma2_rate / (self.sigma2_shape - 1.0)
    }

    pub fn phi_bounds(&self) -> Result<LogitBounds> {
        LogitBounds::new(self.phi_lo, self.phi_hi)
    }

    fn k_max_i32(&self) -> i32 {
        self.k_max.min(i32::MAX as u32) as i32
    }
}

/// `ln Σ_{k=−k_max}^{k_max} N(x + 2πk; μ, σ²)`.
pub fn wrapped_normal_logpdf<T: Scalar>(x: Angle<T>, mu: Angle<T>, sigma2: T, k_max: u32) -> Result<T> {
    if !(sigma2 > T::zero() && sigma2.is_finite()) {
        return Err(invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    let half = T::lit(0.5);
    let base = x.radians() - mu.radians();
    let terms: Vec<T> = (-(k_max as i64)..=k_max as i64)
        .map(|k| {
            let z = base + T::TAU() * T::lit(k as f64);
            -half * z * z / sigma2
        })
        .collect();
    let m = terms.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = terms.iter().map(|&t| (t - m).exp()).sum::<T>();
    Ok(m + sum.ln() - half * (T::TAU() * sigma2).ln())
}

fn unwrap_all(x: &[f64], k: &[i32]) -> Vec<f64> {
    x.iter().zip(k).map(|(&xi, &ki)| xi + TAU * ki as f64).collect()
}

fn check_lengths(x: &[f64], k: &[i32], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    if k.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: k.len() });
    }
    Ok(())
}

/// Complete-data log-likelihood of the unwrapped field `x + 2πk`.
pub fn wgsp_loglik(x: &[Angle<f64>], k: &[i32], params: &WgspParams, d: &DistanceMatrix<f64>) -> Result<f64> {
    let xs: Vec<f64> = x.iter().map(|a| a.radians()).collect();
    check_lengths(&xs, k, d.len())?;
    let r = corr_matrix(d, params.phi)?;
    let factor = CovarianceFactor::new(&r.scale(params.sigma2))?;
    let y = unwrap_all(&xs, k);
    log_mvn_density(&y, &vec![params.mu.radians(); y.len()], &factor)
}

fn residuals(x: &[f64], state: &WgspState) -> Vec<f64> {
    let mu = state.params.mu.radians();
    x.iter().zip(&state.k).map(|(&xi, &ki)| xi + TAU * ki as f64 - mu).collect()
}

/// Gibbs update of every winding number in site order. Returns how many sites
/// kept their value because all candidate weights underflowed.
pub fn update_k<R: Rng + ?Sized>(
    state: &mut WgspState,
    x: &[f64],
    cache: &CorrelationCache,
    priors: &WgspPriors,
    rng: &mut R,
) -> u64 {
    let kmax = priors.k_max_i32();
    let mu = state.params.mu.radians();
    let sigma2 = state.params.sigma2;
    let mut resid = residuals(x, state);
    let mut underflows = 0;
    let mut log_w = Vec::with_capacity(2 * kmax as usize + 1);
    for i in 0..x.len() {
        let row = cache.precision.row(i);
        let pii = row[i];
        let cross = dot(row, &resid) - pii * resid[i];
        let cond_mean = -cross / pii;
        let cond_prec = pii / sigma2;
        log_w.clear();
        log_w.extend((-kmax..=kmax).map(|k| {
            let z = x[i] + TAU * k as f64 - mu - cond_mean;
            -0.5 * cond_prec * z * z
        }));
        match sample_log_weights(&log_w, rng) {
            Some(idx) => {
                let k = idx as i32 - kmax;
                state.k[i] = k;
                resid[i] = x[i] + TAU * k as f64 - mu;
            }
            None => underflows += 1,
        }
    }
    underflows
}

/// Likelihood part of the `μ` update: the unwrapped field is informative about
/// the real-line mean through `N(mean, var)`.
pub fn mu_likelihood_moments(y: &[f64], sigma2: f64, cache: &CorrelationCache) -> (f64, f64) {
    (dot(&cache.precision_ones, y) / cache.ones_quad, sigma2 / cache.ones_quad)
}

/// Full conditional of the lifted mean `μ̃ ∈ [lower, upper)` given the current
/// winding-number configuration up to a common shift: a mixture of truncated
/// normals, one per wrapped image of the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct MuConditional {
    /// `(log weight, mean, variance)`; weights are unnormalized.
    pub components: Vec<(f64, f64, f64)>,
    pub lower: f64,
    pub upper: f64,
}

impl MuConditional {
    /// Weighted mean and variance of the mixture ignoring truncation; exact
    /// when the interval is wide.
    pub fn untruncated_moments(&self) -> (f64, f64) {
        let lw: Vec<f64> = self.components.iter().map(|c| c.0).collect();
        let total = log_sum_exp(&lw);
        let mut mean = 0.0;
        let mut second = 0.0;
        for &(w, m, v) in &self.components {
            let p = (w - total).exp();
            mean += p * m;
            second += p * (v + m * m);
        }
        (mean, second - mean * mean)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        let lw: Vec<f64> = self.components.iter().map(|c| c.0).collect();
        let idx = sample_log_weights(&lw, rng)?;
        let (_, m, v) = self.components[idx];
        Some(truncated_normal(m, v, self.lower, self.upper, rng))
    }
}

/// Builds [`MuConditional`] for the current state.
pub fn mu_full_conditional(
    state: &WgspState,
    x: &[f64],
    cache: &CorrelationCache,
    priors: &WgspPriors,
) -> MuConditional {
    let kmax = priors.k_max_i32();
    let y = unwrap_all(x, &state.k);
    let (a, v) = mu_likelihood_moments(&y, state.params.sigma2, cache);
    // Shifting (μ̃, k) by (2πm, m) keeps y − μ̃ fixed; m is limited by |k − m| ≤ k_max.
    let k_hi = state.k.iter().copied().max().unwrap_or(0);
    let k_lo = state.k.iter().copied().min().unwrap_or(0);
    let m_lo = k_hi - kmax;
    let m_hi = k_lo + kmax;
    let lower = TAU * m_lo as f64;
    let upper = TAU * (m_hi + 1) as f64;
    let sd = v.sqrt();

    let tau = priors.mu_var;
    let mut components = Vec::new();
    if tau >= FLAT_WRAPPED_VAR {
        let w = log_normal_mass((lower - a) / sd, (upper - a) / sd);
        components.push((w, a, v));
    } else {
        let centre = priors.mu_mean.radians();
        let reach = (10.0 * tau.sqrt() / TAU).ceil() as i64 + 1;
        let j_lo = ((lower - centre) / TAU).floor() as i64 - reach;
        let j_hi = ((upper - centre) / TAU).ceil() as i64 + reach;
        let s = tau * v / (tau + v);
        let s_sd = s.sqrt();
        for j in j_lo..=j_hi {
            let c = centre + TAU * j as f64;
            let m = (c * v + a * tau) / (tau + v);
            let w = normal_logpdf(a, c, tau + v) + log_normal_mass((lower - m) / s_sd, (upper - m) / s_sd);
            components.push((w, m, s));
        }
    }
    MuConditional { components, lower, upper }
}

/// Gibbs update of `μ` jointly with a common shift of the winding numbers.
pub fn update_mu<R: Rng + ?Sized>(
    state: &mut WgspState,
    x: &[f64],
    cache: &CorrelationCache,
    priors: &WgspPriors,
    rng: &mut R,
) {
    let cond = mu_full_conditional(state, x, cache, priors);
    let Some(lifted) = cond.sample(rng) else {
        return;
    };
    let kmax = priors.k_max_i32();
    let k_hi = state.k.iter().copied().max().unwrap_or(0);
    let k_lo = state.k.iter().copied().min().unwrap_or(0);
    let shift = ((lifted / TAU).floor() as i32).clamp(k_hi - kmax, k_lo + kmax);
    state.params.mu = Angle::wrap_unchecked(lifted - TAU * shift as f64);
    for k in state.k.iter_mut() {
        *k -= shift;
    }
}

/// Conjugate inverse-gamma update of `σ²`.
pub fn update_sigma2<R: Rng + ?Sized>(
    state: &mut WgspState,
    x: &[f64],
    cache: &CorrelationCache,
    priors: &WgspPriors,
    rng: &mut R,
) -> Result<f64> {
    let resid = residuals(x, state);
    let shape = priors.sigma2_shape + 0.5 * x.len() as f64;
    let rate = priors.sigma2_rate + 0.5 * cache.quad(&resid);
    let s = inverse_gamma(shape, rate, rng)?;
    state.params.sigma2 = s;
    Ok(s)
}

/// Log posterior of `φ` up to a constant, given everything else.
fn phi_log_post(d: &DistanceMatrix<f64>, resid: &[f64], sigma2: f64, phi: f64) -> (f64, Option<CovarianceFactor<f64>>) {
    let Ok(r) = corr_matrix(d, phi) else {
        return (f64::NAN, None);
    };
    let Ok(factor) = CovarianceFactor::new(&r) else {
        return (f64::NAN, None);
    };
    let Ok(q) = factor.quad_form(resid) else {
        return (f64::NAN, None);
    };
    (-0.5 * (factor.log_det() + q / sigma2), Some(factor))
}

/// Adaptive Metropolis update of `φ` on the logit scale of its support.
/// Returns the refreshed cache when the proposal was accepted.
pub fn update_phi<R: Rng + ?Sized>(
    state: &mut WgspState,
    x: &[f64],
    d: &DistanceMatrix<f64>,
    priors: &WgspPriors,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> Result<Option<CorrelationCache>> {
    let bounds = priors.phi_bounds()?;
    let resid = residuals(x, state);
    let sigma2 = state.params.sigma2;
    let mut last = None;
    let step = bounded_step(
        state.params.phi,
        bounds,
        |phi| {
            let (lp, f) = phi_log_post(d, &resid, sigma2, phi);
            last = f.map(|f| (phi, f));
            lp
        },
        scale,
        rng,
    );
    if !step.accepted {
        return Ok(None);
    }
    state.params.phi = step.value;
    match last {
        Some((phi, f)) if phi == step.value => Ok(Some(CorrelationCache::from_factor(phi, f))),
        _ => CorrelationCache::new(d, step.value).map(Some),
    }
}

/// One retained WGSP draw.
#[derive(Debug, Clone, PartialEq)]
pub struct WgspDraw {
    pub mu: Angle<f64>,
    pub sigma2: f64,
    pub phi: f64,
    pub k: Vec<i32>,
}

pub type WgspChain = ChainOutput<WgspDraw>;

#[derive(Debug, Clone, PartialEq)]
pub struct WgspPosterior {
    pub chains: Vec<WgspChain>,
    pub priors: WgspPriors,
}

/// Parameter names used in diagnostics and archives.
pub const WGSP_PARAMS: [&str; 3] = ["mu", "sigma2", "phi"];

impl WgspPosterior {
    pub fn draws(&self) -> impl Iterator<Item = &WgspDraw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    pub fn mu_draws(&self) -> Vec<Angle<f64>> {
        self.draws().map(|d| d.mu).collect()
    }

    pub fn sigma2_draws(&self) -> Vec<f64> {
        self.draws().map(|d| d.sigma2).collect()
    }

    pub fn phi_draws(&self) -> Vec<f64> {
        self.draws().map(|d| d.phi).collect()
    }

    /// Per-monitored-quantity PSRF: `cos_mu`, `sin_mu`, `sigma2`, `phi`.
    pub fn psrf(&self) -> Result<Vec<(String, f64)>> {
        let series = |f: &dyn Fn(&WgspDraw) -> f64| -> Vec<Vec<f64>> {
            self.chains.iter().map(|c| c.draws.iter().map(f).collect()).collect()
        };
        Ok(vec![
            ("cos_mu".into(), psrf(&series(&|d| d.mu.radians().cos()))?),
            ("sin_mu".into(), psrf(&series(&|d| d.mu.radians().sin()))?),
            ("sigma2".into(), psrf(&series(&|d| d.sigma2))?),
            ("phi".into(), psrf(&series(&|d| d.phi))?),
        ])
    }

    /// Posterior summaries of `μ` (circular), `σ²` and `φ` at `level`.
    pub fn summary(&self, level: f64) -> Result<[ParamSummary; 3]> {
        Ok([
            circular_summary(&self.mu_draws(), level)?,
            linear_summary(&self.sigma2_draws(), level)?,
            linear_summary(&self.phi_draws(), level)?,
        ])
    }
}

/// Per-chain working state.
#[derive(Debug, Clone)]
pub struct WgspChainState {
    pub state: WgspState,
    pub cache: CorrelationCache,
    pub k_underflows: u64,
}

/// Sweep `k → μ → σ² → φ` over fixed data.
#[derive(Debug, Clone)]
pub struct WgspKernel {
    x: Vec<f64>,
    dist: DistanceMatrix<f64>,
    priors: WgspPriors,
    init: WgspState,
    /// Parameters held at their initial value; used for restricted runs.
    pub fix_sigma2: bool,
    pub fix_phi: bool,
}

impl WgspKernel {
    /// Kernel with the default start: `k = 0`, `μ` = sample mean direction,
    /// `σ²` = prior mean, `φ` = midpoint of its support.
    pub fn new(data: &SiteTable<f64>, priors: WgspPriors) -> Result<Self> {
        priors.validate()?;
        let mu = circ_mean(data.directions()).unwrap_or(priors.mu_mean);
        let init = WgspState {
            params: WgspParams { mu, sigma2: priors.sigma2_prior_mean(), phi: priors.phi_bounds()?.midpoint() },
            k: vec![0; data.len()],
        };
        Self::with_initial(data, priors, init)
    }

    pub fn with_initial(data: &SiteTable<f64>, priors: WgspPriors, init: WgspState) -> Result<Self> {
        priors.validate()?;
        if init.k.len() != data.len() {
            return Err(Error::DimensionMismatch { expected: data.len(), got: init.k.len() });
        }
        Ok(WgspKernel {
            x: data.directions().iter().map(|a| a.radians()).collect(),
            dist: data.distance_matrix(),
            priors,
            init,
            fix_sigma2: false,
            fix_phi: false,
        })
    }

    pub fn initial(&self) -> &WgspState {
        &self.init
    }
}

impl ModelKernel for WgspKernel {
    type State = WgspChainState;
    type Draw = WgspDraw;

    fn scale_names(&self) -> Vec<String> {
        vec!["phi".into()]
    }

    fn initial_state(&self) -> WgspChainState {
        let cache = CorrelationCache::new(&self.dist, self.init.params.phi).unwrap_or_else(|_| {
            // Rejected by check_state; a placeholder keeps the signature infallible.
            CorrelationCache::from_factor(f64::NAN, CovarianceFactor::from_lower(Matrix::zeros(0, 0)).unwrap())
        });
        WgspChainState { state: self.init.clone(), cache, k_underflows: 0 }
    }

    fn check_state(&self, s: &WgspChainState) -> Result<()> {
        let p = &s.state.params;
        let kmax = self.priors.k_max_i32();
        if s.state.k.iter().any(|k| k.abs() > kmax) {
            return Err(Error::Initialization("k: winding number outside the truncation".into()));
        }
        if !(p.sigma2 > 0.0 && p.sigma2.is_finite()) {
            return Err(Error::Initialization(format!("sigma2: {} is not positive", p.sigma2)));
        }
        if !self.priors.phi_bounds()?.contains(p.phi) {
            return Err(Error::Initialization(format!("phi: {} is outside the prior support", p.phi)));
        }
        if s.cache.len() != self.x.len() || s.cache.phi != p.phi {
            let err = CorrelationCache::new(&self.dist, p.phi).err();
            return Err(Error::Initialization(format!(
                "phi: correlation matrix cannot be factored ({})",
                err.map(|e| e.to_string()).unwrap_or_default()
            )));
        }
        let resid = residuals(&self.x, &s.state);
        let lp = -0.5 * (s.cache.factor.log_det() + s.cache.quad(&resid) / p.sigma2);
        if !lp.is_finite() {
            return Err(Error::Initialization("mu: log-likelihood is not finite".into()));
        }
        Ok(())
    }

    fn sweep(&self, s: &mut WgspChainState, scales: &mut [AdaptiveScale], rng: &mut ChainRng) {
        s.k_underflows += update_k(&mut s.state, &self.x, &s.cache, &self.priors, rng);
        update_mu(&mut s.state, &self.x, &s.cache, &self.priors, rng);
        if !self.fix_sigma2 {
            // Shape and rate are validated positive; the draw cannot fail.
            let _ = update_sigma2(&mut s.state, &self.x, &s.cache, &self.priors, rng);
        }
        if !self.fix_phi {
            if let Ok(Some(cache)) = update_phi(&mut s.state, &self.x, &self.dist, &self.priors, &mut scales[0], rng) {
                s.cache = cache;
            }
        }
    }

    fn record(&self, s: &WgspChainState) -> WgspDraw {
        let p = s.state.params;
        WgspDraw { mu: p.mu, sigma2: p.sigma2, phi: p.phi, k: s.state.k.clone() }
    }

    fn counters(&self, s: &WgspChainState) -> Vec<(String, u64)> {
        vec![("k_underflow".into(), s.k_underflows)]
    }
}

/// Fits the wrapped model by adaptive Metropolis-within-Gibbs.
pub fn fit_wgsp(data: &SiteTable<f64>, priors: &WgspPriors, cfg: &ChainConfig) -> Result<WgspPosterior> {
    if data.len() < MIN_SITES {
        return Err(invalid(format!("need at least {MIN_SITES} sites, got {}", data.len())));
    }
    let kernel = WgspKernel::new(data, *priors)?;
    let chains = run_chains(&kernel, cfg)?;
    Ok(WgspPosterior { chains, priors: *priors })
}

/// Synthetic wrapped field with its latent truth.
#[derive(Debug, Clone, PartialEq)]
pub struct WgspSimulation {
    pub sites: SiteTable<f64>,
    /// Unwrapped field `y`.
    pub latent: Vec<f64>,
    /// Winding numbers with `y = x + 2πk`.
    pub k: Vec<i32>,
}

/// Default site labels `s1, s2, …`.
pub fn site_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("s{i}")).collect()
}

/// Draws `y ~ N(μ1, σ²R(φ))` at `coords` and wraps it.
pub fn simulate_wgsp<R: Rng + ?Sized>(coords: &[(f64, f64)], params: &WgspParams, rng: &mut R) -> Result<WgspSimulation> {
    if !(params.sigma2 > 0.0) {
        return Err(invalid(format!("sigma2 must be positive, got {}", params.sigma2)));
    }
    let d = crate::spatial::distance_matrix(coords)?;
    let factor = CovarianceFactor::new(&corr_matrix(&d, params.phi)?)?;
    let z = crate::spatial::linalg::mvn_sample(&vec![0.0; coords.len()], &factor, rng)?;
    let sd = params.sigma2.sqrt();
    let latent: Vec<f64> = z.iter().map(|zi| params.mu.radians() + sd * zi).collect();
    let k: Vec<i32> = latent.iter().map(|y| (y / TAU).floor() as i32).collect();
    let dirs = latent.iter().map(|&y| Angle::wrap_unchecked(y)).collect();
    let sites = SiteTable::new(site_ids(coords.len()), coords.to_vec(), dirs)?;
    Ok(WgspSimulation { sites, latent, k })
}
