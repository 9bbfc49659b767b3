//! Projected Gaussian spatial process.
//!
//! A bivariate field `Y(s) ~ GP(μ, R(φ) ⊗ T)` is observed only through its
//! direction `x(s) = atan2(Y₂, Y₁)`; the lengths `r(s) = ‖Y(s)‖` are latent.
//! `T = [[τ², ρτ], [ρτ, 1]]` has its second variance pinned to 1, which is
//! what makes the scale of `Y` identifiable from directions alone.
//! Vectors are stacked site-major: `(Y₁(s₁), Y₂(s₁), Y₁(s₂), …)`.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::circular::{atan2_star, circ_mean, Angle};
use crate::distributions::{inverse_gamma_logpdf, normal_cdf};
use crate::error::{invalid, Error, Result};
use crate::mcmc::{
    bounded_step, circular_summary, linear_summary, positive_step, psrf, run_chains, AdaptiveScale, ChainConfig,
    ChainOutput, ChainRng, LogitBounds, ModelKernel, ParamSummary,
};
use crate::scalar::Scalar;
use crate::spatial::linalg::{CovarianceFactor, Matrix};
use crate::spatial::{corr_matrix, CorrelationCache, DistanceMatrix, SiteTable};
use crate::wgsp::{site_ids, MIN_SITES};

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn identity() -> Self {
        Sym2::new(1.0, 0.0, 1.0)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0 && self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }

    pub fn inverse(&self) -> Self {
        let d = self.det();
        Sym2::new(self.yy / d, -self.xy / d, self.xx / d)
    }

    pub fn scale(&self, s: f64) -> Self {
        Sym2::new(s * self.xx, s * self.xy, s * self.yy)
    }

    pub fn add(&self, o: &Sym2) -> Self {
        Sym2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn quad(&self, v: [f64; 2]) -> f64 {
        let w = self.mul_vec(v);
        v[0] * w[0] + v[1] * w[1]
    }

    /// `tr(self · o)` for symmetric `o`.
    pub fn trace_product(&self, o: &Sym2) -> f64 {
        self.xx * o.xx + 2.0 * self.xy * o.xy + self.yy * o.yy
    }

    /// Lower Cholesky factor `[[l11, 0], [l21, l22]]`.
    pub fn cholesky(&self) -> Result<[f64; 3]> {
        if !self.is_positive_definite() {
            return Err(invalid("2x2 matrix is not positive definite"));
        }
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let l22 = (self.yy - l21 * l21).sqrt();
        Ok([l11, l21, l22])
    }

    pub fn to_matrix(&self) -> Matrix<f64> {
        Matrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => self.xx,
            (1, 1) => self.yy,
            _ => self.xy,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgspParams {
    pub mu: [f64; 2],
    pub tau2: f64,
    pub rho: f64,
    pub phi: f64,
}

impl PgspParams {
    /// `T = [[τ², ρτ], [ρτ, 1]]`.
    pub fn t_matrix(&self) -> Sym2 {
        Sym2::new(self.tau2, self.rho * self.tau2.sqrt(), 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return Err(invalid(format!("tau2 must be positive, got {}", self.tau2)));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(invalid(format!("rho must be in (-1, 1), got {}", self.rho)));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(invalid(format!("phi must be positive, got {}", self.phi)));
        }
        if !(self.mu[0].is_finite() && self.mu[1].is_finite()) {
            return Err(invalid("mu must be finite"));
        }
        Ok(())
    }

    /// Direction of the mean vector.
    pub fn mean_direction(&self) -> Result<Angle<f64>> {
        atan2_star(self.mu[1], self.mu[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgspState {
    pub params: PgspParams,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgspPriors {
    /// Bivariate normal prior on `μ`.
    pub mu_mean: [f64; 2],
    pub mu_cov: Sym2,
    /// Inverse-gamma prior on `τ²`.
    pub tau2_shape: f64,
    pub tau2_rate: f64,
    /// Uniform prior support of `φ`; `ρ` is uniform on `(−1, 1)`.
    pub phi_lo: f64,
    pub phi_hi: f64,
}

impl Default for PgspPriors {
    /// `μ ~ N((0, 1), 10·I)`, `τ² ~ IG(7, 6)` (mean 1), `φ ~ U(0.001, 0.9)`.
    fn default() -> Self {
        PgspPriors {
            mu_mean: [0.0, 1.0],
            mu_cov: Sym2::new(10.0, 0.0, 10.0),
            tau2_shape: 7.0,
            tau2_rate: 6.0,
            phi_lo: 0.001,
            phi_hi: 0.9,
        }
    }
}

impl PgspPriors {
    pub fn validate(&self) -> Result<()> {
        if !self.mu_cov.is_positive_definite() {
            return Err(invalid("mu_cov must be positive definite"));
        }
        if !(self.mu_mean[0].is_finite() && self.mu_mean[1].is_finite()) {
            return Err(invalid("mu_mean must be finite"));
        }
        if !(self.tau2_shape > 0.0 && self.tau2_rate > 0.0 && self.tau2_shape.is_finite() && self.tau2_rate.is_finite())
        {
            return Err(invalid("tau2 prior shape and rate must be positive"));
        }
        if !(self.phi_lo > 0.0) {
            return Err(invalid(format!("phi_lo must be positive, got {}", self.phi_lo)));
        }
        self.phi_bounds().map(|_| ())
    }

    pub fn phi_bounds(&self) -> Result<LogitBounds> {
        LogitBounds::new(self.phi_lo, self.phi_hi)
    }

    pub fn rho_bounds() -> LogitBounds {
        LogitBounds { lo: -1.0, hi: 1.0 }
    }
}

/// Interleaved `(r_i cos x_i, r_i sin x_i)` in site order.
pub fn stack_embedding(x: &[Angle<f64>], r: &[f64]) -> Result<Vec<f64>> {
    if x.len() != r.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: r.len() });
    }
    if let Some(i) = r.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid(format!("radius at site {i} must be positive, got {}", r[i])));
    }
    Ok(x.iter()
        .zip(r)
        .flat_map(|(a, &ri)| {
            let (c, s) = a.embedding();
            [ri * c, ri * s]
        })
        .collect())
}

/// Inverse of [`stack_embedding`].
pub fn unstack_embedding(y: &[f64]) -> Result<(Vec<Angle<f64>>, Vec<f64>)> {
    if y.len() % 2 != 0 {
        return Err(invalid("stacked embedding must have even length"));
    }
    let mut x = Vec::with_capacity(y.len() / 2);
    let mut r = Vec::with_capacity(y.len() / 2);
    for pair in y.chunks(2) {
        x.push(atan2_star(pair[1], pair[0])?);
        r.push(pair[0].hypot(pair[1]));
    }
    Ok((x, r))
}

/// Dense `R(φ) ⊗ T` under site-major stacking.
pub fn cross_cov(d: &DistanceMatrix<f64>, phi: f64, t: &Sym2) -> Result<Matrix<f64>> {
    if !t.is_positive_definite() {
        return Err(invalid("T must be positive definite"));
    }
    Ok(corr_matrix(d, phi)?.kron(&t.to_matrix()))
}

/// `R(φ) ⊗ T` held through its factors.
#[derive(Debug, Clone)]
pub struct KroneckerCovariance<'a> {
    pub corr: &'a CorrelationCache,
    pub t: Sym2,
    t_inv: Sym2,
}

impl<'a> KroneckerCovariance<'a> {
    pub fn new(corr: &'a CorrelationCache, t: Sym2) -> Result<Self> {
        if !t.is_positive_definite() {
            return Err(invalid("T must be positive definite"));
        }
        Ok(KroneckerCovariance { corr, t, t_inv: t.inverse() })
    }

    /// `2·ln|R| + n·ln|T|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.corr.factor.log_det() + self.corr.len() as f64 * self.t.det().ln()
    }

    /// `vec(E)ᵀ (R ⊗ T)⁻¹ vec(E) = tr(T⁻¹ Eᵀ R⁻¹ E)` for site-major residuals.
    pub fn quad(&self, resid: &[f64]) -> f64 {
        self.t_inv.trace_product(&scatter(self.corr, resid))
    }

    /// Log density of `N(μ ⊗ 1, R ⊗ T)` at stacked `y`.
    pub fn log_density(&self, y: &[f64], mu: [f64; 2]) -> f64 {
        let resid = residuals(y, mu);
        -0.5 * (y.len() as f64 * TAU.ln() + self.log_det() + self.quad(&resid))
    }
}

fn residuals(y: &[f64], mu: [f64; 2]) -> Vec<f64> {
    y.chunks(2).flat_map(|p| [p[0] - mu[0], p[1] - mu[1]]).collect()
}

/// `Eᵀ R⁻¹ E` for site-major residual pairs `E`.
pub fn scatter(corr: &CorrelationCache, resid: &[f64]) -> Sym2 {
    let n = corr.len();
    let mut s = Sym2::default();
    for i in 0..n {
        let row = corr.precision.row(i);
        let (mut a, mut b) = (0.0, 0.0);
        for j in 0..n {
            a += row[j] * resid[2 * j];
            b += row[j] * resid[2 * j + 1];
        }
        s.xx += resid[2 * i] * a;
        s.xy += resid[2 * i] * b;
        s.yy += resid[2 * i + 1] * b;
    }
    s
}

/// Complete-data log-likelihood of `(x, r)`, including the polar Jacobian `Σ ln r_i`.
pub fn pgsp_loglik(x: &[Angle<f64>], r: &[f64], params: &PgspParams, d: &DistanceMatrix<f64>) -> Result<f64> {
    params.validate()?;
    if x.len() != d.len() {
        return Err(Error::DimensionMismatch { expected: d.len(), got: x.len() });
    }
    let y = stack_embedding(x, r)?;
    let corr = CorrelationCache::new(d, params.phi)?;
    let cov = KroneckerCovariance::new(&corr, params.t_matrix())?;
    Ok(cov.log_density(&y, params.mu) + r.iter().map(|v| v.ln()).sum::<f64>())
}

/// Density on `[0, 2π)` of the direction of `N(μ, Σ)` in the plane.
pub fn projected_normal_pdf<T: Scalar>(theta: Angle<T>, mu: [T; 2], sigma: [[T; 2]; 2]) -> Result<T> {
    let det = sigma[0][0] * sigma[1][1] - sigma[0][1] * sigma[1][0];
    if !(sigma[0][0] > T::zero() && det > T::zero()) || sigma[0][1] != sigma[1][0] {
        return Err(invalid("covariance must be symmetric positive definite"));
    }
    let inv = [[sigma[1][1] / det, -sigma[0][1] / det], [-sigma[1][0] / det, sigma[0][0] / det]];
    let (c, s) = theta.embedding();
    let u = [c, s];
    let form = |a: [T; 2], b: [T; 2]| {
        a[0] * (inv[0][0] * b[0] + inv[0][1] * b[1]) + a[1] * (inv[1][0] * b[0] + inv[1][1] * b[1])
    };
    let a = form(u, u);
    let b = form(u, mu);
    let cq = form(mu, mu);
    let dd = b / a.sqrt();
    let half = T::lit(0.5);
    let cdf = T::lit(normal_cdf(dd.to_f64().unwrap_or(f64::NAN)));
    // D² ≤ C, so the second exponent never overflows.
    let body = (-half * cq).exp() + dd * cdf * T::TAU().sqrt() * (half * (dd * dd - cq)).exp();
    Ok(body / (T::TAU() * a * det.sqrt()))
}

/// Site-`i` block of `Y` given all other blocks: `(mean, precision)` with
/// precision `(R⁻¹)_ii T⁻¹`.
pub fn site_conditional(corr: &CorrelationCache, y: &[f64], mu: [f64; 2], t_inv: &Sym2, i: usize) -> ([f64; 2], Sym2) {
    let row = corr.precision.row(i);
    let pii = row[i];
    let (mut a, mut b) = (0.0, 0.0);
    for (j, &p) in row.iter().enumerate() {
        if j != i {
            a += p * (y[2 * j] - mu[0]);
            b += p * (y[2 * j + 1] - mu[1]);
        }
    }
    ([mu[0] - a / pii, mu[1] - b / pii], t_inv.scale(pii))
}

/// Adaptive Metropolis update of every latent length on the log scale.
pub fn update_r<R: Rng + ?Sized>(
    state: &mut PgspState,
    x: &[Angle<f64>],
    corr: &CorrelationCache,
    scales: &mut [AdaptiveScale],
    rng: &mut R,
) {
    let mu = state.params.mu;
    let t_inv = state.params.t_matrix().inverse();
    let mut y = stack_embedding(x, &state.r).expect("radii stay positive");
    for i in 0..x.len() {
        let (m, prec) = site_conditional(corr, &y, mu, &t_inv, i);
        let u = x[i].embedding();
        let log_post = |r: f64| {
            let e = [r * u.0 - m[0], r * u.1 - m[1]];
            -0.5 * prec.quad(e) + r.ln()
        };
        let step = positive_step(state.r[i], log_post, &mut scales[i], rng);
        state.r[i] = step.value;
        y[2 * i] = step.value * u.0;
        y[2 * i + 1] = step.value * u.1;
    }
}

/// Bivariate normal full conditional of `μ`: `(mean, covariance)`.
pub fn mu_vec_conditional(y: &[f64], corr: &CorrelationCache, t: &Sym2, priors: &PgspPriors) -> ([f64; 2], Sym2) {
    let prior_prec = priors.mu_cov.inverse();
    let t_inv = t.inverse();
    let prec = prior_prec.add(&t_inv.scale(corr.ones_quad));
    let mut wy = [0.0; 2];
    for (j, &w) in corr.precision_ones.iter().enumerate() {
        wy[0] += w * y[2 * j];
        wy[1] += w * y[2 * j + 1];
    }
    let a = prior_prec.mul_vec(priors.mu_mean);
    let b = t_inv.mul_vec(wy);
    let cov = prec.inverse();
    (cov.mul_vec([a[0] + b[0], a[1] + b[1]]), cov)
}

/// Conjugate draw of `μ`.
pub fn update_mu_vec<R: Rng + ?Sized>(
    state: &mut PgspState,
    x: &[Angle<f64>],
    corr: &CorrelationCache,
    priors: &PgspPriors,
    rng: &mut R,
) -> Result<[f64; 2]> {
    let y = stack_embedding(x, &state.r)?;
    let (m, cov) = mu_vec_conditional(&y, corr, &state.params.t_matrix(), priors);
    let [l11, l21, l22] = cov.cholesky()?;
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    let mu = [m[0] + l11 * z0, m[1] + l21 * z0 + l22 * z1];
    state.params.mu = mu;
    Ok(mu)
}

/// Log-likelihood in `T` given the residual scatter `S = EᵀR⁻¹E` over `n` sites.
fn t_loglik(t: &Sym2, s: &Sym2, n: usize) -> f64 {
    if !t.is_positive_definite() {
        return f64::NEG_INFINITY;
    }
    -0.5 * (n as f64 * t.det().ln() + t.inverse().trace_product(s))
}

/// Adaptive Metropolis update of `τ²` on the log scale.
pub fn update_tau2<R: Rng + ?Sized>(
    state: &mut PgspState,
    s: &Sym2,
    n: usize,
    priors: &PgspPriors,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> f64 {
    let rho = state.params.rho;
    let log_post = |tau2: f64| {
        let t = Sym2::new(tau2, rho * tau2.sqrt(), 1.0);
        t_loglik(&t, s, n) + inverse_gamma_logpdf(tau2, priors.tau2_shape, priors.tau2_rate)
    };
    state.params.tau2 = positive_step(state.params.tau2, log_post, scale, rng).value;
    state.params.tau2
}

/// Adaptive Metropolis update of `ρ` on `logit((ρ + 1)/2)`.
pub fn update_rho<R: Rng + ?Sized>(
    state: &mut PgspState,
    s: &Sym2,
    n: usize,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> f64 {
    let tau2 = state.params.tau2;
    let log_post = |rho: f64| t_loglik(&Sym2::new(tau2, rho * tau2.sqrt(), 1.0), s, n);
    state.params.rho = bounded_step(state.params.rho, PgspPriors::rho_bounds(), log_post, scale, rng).value;
    state.params.rho
}

/// Adaptive Metropolis update of `φ`; returns the refreshed cache on acceptance.
pub fn update_phi<R: Rng + ?Sized>(
    state: &mut PgspState,
    x: &[Angle<f64>],
    d: &DistanceMatrix<f64>,
    priors: &PgspPriors,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> Result<Option<CorrelationCache>> {
    let bounds = priors.phi_bounds()?;
    let y = stack_embedding(x, &state.r)?;
    let resid = residuals(&y, state.params.mu);
    let t_inv = state.params.t_matrix().inverse();
    let mut last = None;
    let step = bounded_step(
        state.params.phi,
        bounds,
        |phi| {
            let Ok(cache) = CorrelationCache::new(d, phi) else {
                last = None;
                return f64::NAN;
            };
            let lp = -(cache.factor.log_det()) - 0.5 * t_inv.trace_product(&scatter(&cache, &resid));
            last = Some(cache);
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
        Some(c) if c.phi == step.value => Ok(Some(c)),
        _ => CorrelationCache::new(d, step.value).map(Some),
    }
}

/// Sequential `τ² → ρ → φ` updates. `scales` holds the three scales in that order.
pub fn update_tau2_rho_phi<R: Rng + ?Sized>(
    state: &mut PgspState,
    x: &[Angle<f64>],
    d: &DistanceMatrix<f64>,
    corr: &CorrelationCache,
    priors: &PgspPriors,
    scales: &mut [AdaptiveScale],
    rng: &mut R,
) -> Result<Option<CorrelationCache>> {
    let y = stack_embedding(x, &state.r)?;
    let s = scatter(corr, &residuals(&y, state.params.mu));
    update_tau2(state, &s, x.len(), priors, &mut scales[0], rng);
    update_rho(state, &s, x.len(), &mut scales[1], rng);
    update_phi(state, x, d, priors, &mut scales[2], rng)
}

/// One retained PGSP draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PgspDraw {
    pub mu: [f64; 2],
    pub tau2: f64,
    pub rho: f64,
    pub phi: f64,
    pub r: Vec<f64>,
}

impl PgspDraw {
    pub fn params(&self) -> PgspParams {
        PgspParams { mu: self.mu, tau2: self.tau2, rho: self.rho, phi: self.phi }
    }
}

pub type PgspChain = ChainOutput<PgspDraw>;

#[derive(Debug, Clone, PartialEq)]
pub struct PgspPosterior {
    pub chains: Vec<PgspChain>,
    pub priors: PgspPriors,
}

/// Parameter names used in diagnostics and archives.
pub const PGSP_PARAMS: [&str; 5] = ["mu1", "mu2", "tau2", "rho", "phi"];

impl PgspPosterior {
    pub fn draws(&self) -> impl Iterator<Item = &PgspDraw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    fn column(&self, f: impl Fn(&PgspDraw) -> f64) -> Vec<f64> {
        self.draws().map(f).collect()
    }

    /// Direction of `μ` in each draw.
    pub fn mean_direction_draws(&self) -> Result<Vec<Angle<f64>>> {
        self.draws().map(|d| atan2_star(d.mu[1], d.mu[0])).collect()
    }

    /// Circular mean of the per-draw directions of `μ`.
    pub fn mean_direction(&self) -> Result<Angle<f64>> {
        circ_mean(&self.mean_direction_draws()?)
    }

    pub fn psrf(&self) -> Result<Vec<(String, f64)>> {
        let getters: [fn(&PgspDraw) -> f64; 5] = [|d| d.mu[0], |d| d.mu[1], |d| d.tau2, |d| d.rho, |d| d.phi];
        PGSP_PARAMS
            .iter()
            .zip(getters)
            .map(|(name, f)| {
                let chains: Vec<Vec<f64>> = self.chains.iter().map(|c| c.draws.iter().map(f).collect()).collect();
                Ok((name.to_string(), psrf(&chains)?))
            })
            .collect()
    }

    /// Summaries of `μ₁, μ₂, τ², ρ, φ`, then the direction of `μ`.
    pub fn summary(&self, level: f64) -> Result<[ParamSummary; 6]> {
        Ok([
            linear_summary(&self.column(|d| d.mu[0]), level)?,
            linear_summary(&self.column(|d| d.mu[1]), level)?,
            linear_summary(&self.column(|d| d.tau2), level)?,
            linear_summary(&self.column(|d| d.rho), level)?,
            linear_summary(&self.column(|d| d.phi), level)?,
            circular_summary(&self.mean_direction_draws()?, level)?,
        ])
    }
}

/// Per-chain working state.
#[derive(Debug, Clone)]
pub struct PgspChainState {
    pub state: PgspState,
    pub cache: CorrelationCache,
}

/// Sweep `r → μ → τ² → ρ → φ` over fixed data.
#[derive(Debug, Clone)]
pub struct PgspKernel {
    x: Vec<Angle<f64>>,
    dist: DistanceMatrix<f64>,
    priors: PgspPriors,
    init: PgspState,
}

impl PgspKernel {
    /// Default start: `r = 1`, `μ` = unit mean resultant (or `(0, 1)`),
    /// `τ² = 1`, `ρ = 0`, `φ` = midpoint of its support.
    pub fn new(data: &SiteTable<f64>, priors: PgspPriors) -> Result<Self> {
        priors.validate()?;
        let n = data.len() as f64;
        let (c, s) = data
            .directions()
            .iter()
            .fold((0.0, 0.0), |(c, s), a| (c + a.radians().cos(), s + a.radians().sin()));
        let norm = (c / n).hypot(s / n);
        let mu = if norm > 1e-12 { [c / n / norm, s / n / norm] } else { [0.0, 1.0] };
        let init = PgspState {
            params: PgspParams { mu, tau2: 1.0, rho: 0.0, phi: priors.phi_bounds()?.midpoint() },
            r: vec![1.0; data.len()],
        };
        Self::with_initial(data, priors, init)
    }

    pub fn with_initial(data: &SiteTable<f64>, priors: PgspPriors, init: PgspState) -> Result<Self> {
        priors.validate()?;
        if init.r.len() != data.len() {
            return Err(Error::DimensionMismatch { expected: data.len(), got: init.r.len() });
        }
        Ok(PgspKernel { x: data.directions().to_vec(), dist: data.distance_matrix(), priors, init })
    }

    pub fn initial(&self) -> &PgspState {
        &self.init
    }
}

impl ModelKernel for PgspKernel {
    type State = PgspChainState;
    type Draw = PgspDraw;

    fn scale_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.x.len()).map(|i| format!("r{i}")).collect();
        names.extend(["tau2", "rho", "phi"].map(String::from));
        names
    }

    fn initial_state(&self) -> PgspChainState {
        let cache = CorrelationCache::new(&self.dist, self.init.params.phi).unwrap_or_else(|_| {
            // Rejected by check_state.
            CorrelationCache::from_factor(f64::NAN, CovarianceFactor::from_lower(Matrix::zeros(0, 0)).unwrap())
        });
        PgspChainState { state: self.init.clone(), cache }
    }

    fn check_state(&self, s: &PgspChainState) -> Result<()> {
        let p = &s.state.params;
        if !(p.tau2 > 0.0 && p.tau2.is_finite()) {
            return Err(Error::Initialization(format!("tau2: {} is not positive", p.tau2)));
        }
        if !(p.rho > -1.0 && p.rho < 1.0) {
            return Err(Error::Initialization(format!("rho: {} is outside (-1, 1)", p.rho)));
        }
        if !self.priors.phi_bounds()?.contains(p.phi) {
            return Err(Error::Initialization(format!("phi: {} is outside the prior support", p.phi)));
        }
        if let Some(i) = s.state.r.iter().position(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Initialization(format!("r{}: radius must be positive", i + 1)));
        }
        if !(p.mu[0].is_finite() && p.mu[1].is_finite()) {
            return Err(Error::Initialization("mu: not finite".into()));
        }
        if s.cache.len() != self.x.len() || s.cache.phi != p.phi {
            let err = CorrelationCache::new(&self.dist, p.phi).err();
            return Err(Error::Initialization(format!(
                "phi: correlation matrix cannot be factored ({})",
                err.map(|e| e.to_string()).unwrap_or_default()
            )));
        }
        Ok(())
    }

    fn sweep(&self, s: &mut PgspChainState, scales: &mut [AdaptiveScale], rng: &mut ChainRng) {
        let n = self.x.len();
        update_r(&mut s.state, &self.x, &s.cache, &mut scales[..n], rng);
        // Validated inputs keep every step below infallible.
        let _ = update_mu_vec(&mut s.state, &self.x, &s.cache, &self.priors, rng);
        if let Ok(Some(cache)) =
            update_tau2_rho_phi(&mut s.state, &self.x, &self.dist, &s.cache, &self.priors, &mut scales[n..], rng)
        {
            s.cache = cache;
        }
    }

    fn record(&self, s: &PgspChainState) -> PgspDraw {
        let p = s.state.params;
        PgspDraw { mu: p.mu, tau2: p.tau2, rho: p.rho, phi: p.phi, r: s.state.r.clone() }
    }
}

/// Fits the projected model by adaptive Metropolis-within-Gibbs.
pub fn fit_pgsp(data: &SiteTable<f64>, priors: &PgspPriors, cfg: &ChainConfig) -> Result<PgspPosterior> {
    if data.len() < MIN_SITES {
        return Err(invalid(format!("need at least {MIN_SITES} sites, got {}", data.len())));
    }
    let kernel = PgspKernel::new(data, *priors)?;
    let chains = run_chains(&kernel, cfg)?;
    Ok(PgspPosterior { chains, priors: *priors })
}

/// Synthetic projected field with its latent truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PgspSimulation {
    pub sites: SiteTable<f64>,
    /// Bivariate field per site.
    pub latent: Vec<[f64; 2]>,
}

/// Draws stacked `Y ~ N(μ ⊗ 1, R(φ) ⊗ T)` and projects each site.
pub fn simulate_pgsp<R: Rng + ?Sized>(coords: &[(f64, f64)], params: &PgspParams, rng: &mut R) -> Result<PgspSimulation> {
    params.validate()?;
    let d = crate::spatial::distance_matrix(coords)?;
    let factor = CovarianceFactor::new(&corr_matrix(&d, params.phi)?)?;
    let [t11, t21, t22] = params.t_matrix().cholesky()?;
    let n = coords.len();
    // chol(R ⊗ T) = chol(R) ⊗ chol(T).
    let z: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [t11 * a, t21 * a + t22 * b]
        })
        .collect();
    let l = factor.lower();
    let latent: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let mut v = params.mu;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                v[0] += l[(i, j)] * zj[0];
                v[1] += l[(i, j)] * zj[1];
            }
            v
        })
        .collect();
    let dirs = latent.iter().map(|v| atan2_star(v[1], v[0])).collect::<Result<Vec<_>>>()?;
    let sites = SiteTable::new(site_ids(n), coords.to_vec(), dirs)?;
    Ok(PgspSimulation { sites, latent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circular::{wrap, CircDistance};
    use crate::distributions::inverse_gamma;
    use crate::spatial::distance_matrix;
    use crate::testing::{determinant, random_spd};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn rng(seed: u64) -> ChainRng {
        ChainRng::seed_from_u64(seed)
    }

    fn a(x: f64) -> Angle<f64> {
        wrap(x).unwrap()
    }

    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + h * i as f64);
        }
        s * h / 3.0
    }

    fn random_sites(n: usize, r: &mut ChainRng) -> Vec<(f64, f64)> {
        (0..n).map(|_| (50.0 * r.random::<f64>(), 50.0 * r.random::<f64>())).collect()
    }

    #[test]
    fn embedding_examples() {
        let y = stack_embedding(&[a(0.0), a(FRAC_PI_2)], &[1.0, 2.0]).unwrap();
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 0.0);
        assert!(y[2].abs() < 1e-15 && (y[3] - 2.0).abs() < 1e-15);
        assert!(stack_embedding(&[a(0.0)], &[0.0]).is_err());
        assert!(stack_embedding(&[a(0.0)], &[-1.0]).is_err());
    }

    #[test]
    fn cross_cov_examples() {
        let t = Sym2::new(2.0, 0.3, 1.0);
        let d = distance_matrix(&[(0.0, 0.0)]).unwrap();
        assert_eq!(cross_cov(&d, 0.1, &t).unwrap(), t.to_matrix());
        let d = distance_matrix(&[(0.0, 0.0), (1e5, 0.0)]).unwrap();
        let c = cross_cov(&d, 0.1, &t).unwrap();
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert_eq!(c[(i, j)], 0.0);
        }
        assert_eq!(c[(2, 3)], 0.3);
        assert!(cross_cov(&d, 0.1, &Sym2::new(1.0, 2.0, 1.0)).is_err());
    }

    #[test]
    fn kronecker_identities_match_dense() {
        let mut r = rng(1);
        for n in 1..=10 {
            let coords = random_sites(n, &mut r);
            let d = distance_matrix(&coords).unwrap();
            let t = Sym2::new(0.5 + r.random::<f64>(), 0.4 * r.random::<f64>() - 0.2, 1.0);
            let phi = 0.05 + 0.2 * r.random::<f64>();
            let corr = CorrelationCache::new(&d, phi).unwrap();
            let k = KroneckerCovariance::new(&corr, t).unwrap();
            let dense = cross_cov(&d, phi, &t).unwrap();
            let ld = determinant(&dense).ln();
            assert!((k.log_det() - ld).abs() < 1e-9, "n={n}");
            let e: Vec<f64> = (0..2 * n).map(|_| r.random::<f64>() - 0.5).collect();
            let inv = crate::testing::dense_inverse(&dense);
            let q: f64 = (0..2 * n).map(|i| e[i] * (0..2 * n).map(|j| inv[(i, j)] * e[j]).sum::<f64>()).sum();
            assert!((k.quad(&e) - q).abs() < 1e-9 * q.max(1.0));
        }
    }

    #[test]
    fn loglik_polar_standard_normal() {
        let d = distance_matrix(&[(0.0, 0.0)]).unwrap();
        let p = PgspParams { mu: [0.0, 0.0], tau2: 1.0, rho: 0.0, phi: 0.1 };
        let r: f64 = 1.7;
        let v = pgsp_loglik(&[a(2.0)], &[r], &p, &d).unwrap();
        let expect = -0.5 * (2.0 * TAU.ln() + r * r) + r.ln();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn loglik_rotation_invariant_with_identity_t() {
        let coords = [(0.0, 0.0), (3.0, 4.0), (7.0, 1.0)];
        let d = distance_matrix(&coords).unwrap();
        let x = [a(0.3), a(2.0), a(5.5)];
        let r = [0.7, 1.4, 2.2];
        let base = PgspParams { mu: [0.8, -0.3], tau2: 1.0, rho: 0.0, phi: 0.2 };
        let v0 = pgsp_loglik(&x, &r, &base, &d).unwrap();
        for delta in [0.4, -2.0, 3.1] {
            let (c, s) = (f64::cos(delta), f64::sin(delta));
            let rotated = PgspParams { mu: [c * 0.8 + s * 0.3, s * 0.8 - c * 0.3], ..base };
            let xr: Vec<_> = x.iter().map(|v| v.rotate(delta)).collect();
            let v1 = pgsp_loglik(&xr, &r, &rotated, &d).unwrap();
            assert!((v0 - v1).abs() < 1e-12);
        }
    }

    #[test]
    fn projected_normal_examples() {
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        for t in [0.0, 1.0, 4.0] {
            let v = projected_normal_pdf(a(t), [0.0, 0.0], eye).unwrap();
            assert!((v - 1.0 / TAU).abs() < 1e-15);
        }
        let at = |t: f64| projected_normal_pdf(a(t), [3.0, 0.0], eye).unwrap();
        assert!(at(0.0) > at(0.01) && at(0.0) > at(TAU - 0.01) && at(0.0) > at(PI));
        assert!(projected_normal_pdf(a(0.0), [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]).is_err());
        let single = projected_normal_pdf(wrap(0.5f32).unwrap(), [1.0, 0.5], [[1.0, 0.2], [0.2, 0.8]]).unwrap();
        let double = projected_normal_pdf(a(0.5), [1.0, 0.5], [[1.0, 0.2], [0.2, 0.8]]).unwrap();
        assert!((single as f64 - double).abs() < 1e-5);
    }

    #[test]
    fn projected_normal_integrates_to_one() {
        let mut r = rng(2);
        for _ in 0..5 {
            let s = random_spd(2, &mut r);
            let sigma = [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]];
            let mu = [4.0 * r.random::<f64>() - 2.0, 4.0 * r.random::<f64>() - 2.0];
            let q = simpson(|t| projected_normal_pdf(a(t), mu, sigma).unwrap(), 0.0, TAU - 1e-15, 20_000);
            assert!((q - 1.0).abs() < 1e-8, "{q}");
        }
    }

    #[test]
    fn loglik_marginal_over_radius_is_projected_normal() {
        let d = distance_matrix(&[(0.0, 0.0)]).unwrap();
        let p = PgspParams { mu: [0.6, 0.9], tau2: 1.8, rho: -0.4, phi: 0.1 };
        let t = p.t_matrix();
        let sigma = [[t.xx, t.xy], [t.xy, t.yy]];
        for theta in [0.2, 1.9, 4.4] {
            let f = |r: f64| if r <= 0.0 { 0.0 } else { pgsp_loglik(&[a(theta)], &[r], &p, &d).unwrap().exp() };
            let m = simpson(f, 0.0, 40.0, 40_000);
            let pdf = projected_normal_pdf(a(theta), p.mu, sigma).unwrap();
            assert!((m.ln() - pdf.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn r_update_matches_conditional_mean() {
        let d = distance_matrix(&[(0.0, 0.0)]).unwrap();
        let corr = CorrelationCache::new(&d, 0.1).unwrap();
        let params = PgspParams { mu: [5.0, 0.0], tau2: 1.0, rho: 0.0, phi: 0.1 };
        let mut st = PgspState { params, r: vec![1.0] };
        let mut scales = [AdaptiveScale::new(-1.0)];
        let mut r = rng(3);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            update_r(&mut st, &[a(0.0)], &corr, &mut scales, &mut r);
            assert!(st.r[0] > 0.0);
            sum += st.r[0];
        }
        // Density of r given θ = 0 is ∝ r·exp(−(r − 5)²/2).
        let z = simpson(|v| v * (-0.5 * (v - 5.0) * (v - 5.0)).exp(), 0.0, 15.0, 20_000);
        let m = simpson(|v| v * v * (-0.5 * (v - 5.0) * (v - 5.0)).exp(), 0.0, 15.0, 20_000) / z;
        let est = sum / n as f64;
        assert!((est - m).abs() < 0.03 * m, "{est} vs {m}");
    }

    #[test]
    fn mu_vec_conditional_limits() {
        let d = distance_matrix(&[(0.0, 0.0), (1e5, 0.0)]).unwrap();
        let corr = CorrelationCache::new(&d, 0.5).unwrap();
        let y = [1.0, 2.0, 3.0, -1.0];
        let flat = PgspPriors { mu_cov: Sym2::new(1e14, 0.0, 1e14), ..PgspPriors::default() };
        let (m, _) = mu_vec_conditional(&y, &corr, &Sym2::identity(), &flat);
        assert!((m[0] - 2.0).abs() < 1e-10 && (m[1] - 0.5).abs() < 1e-10);

        let d1 = distance_matrix(&[(0.0, 0.0)]).unwrap();
        let c1 = CorrelationCache::new(&d1, 0.5).unwrap();
        let (m, cov) = mu_vec_conditional(&[1.5, -0.5], &c1, &Sym2::identity(), &flat);
        assert!((m[0] - 1.5).abs() < 1e-10 && (m[1] + 0.5).abs() < 1e-10);
        assert!((cov.xx - 1.0).abs() < 1e-10);

        let tight = PgspPriors { mu_mean: [0.3, -0.2], mu_cov: Sym2::new(1e-14, 0.0, 1e-14), ..PgspPriors::default() };
        let mut st = PgspState { params: PgspParams { mu: [0.0, 0.0], tau2: 1.0, rho: 0.0, phi: 0.5 }, r: vec![2.0, 1.0] };
        update_mu_vec(&mut st, &[a(0.5), a(2.5)], &corr, &tight, &mut rng(4)).unwrap();
        assert!((st.params.mu[0] - 0.3).abs() < 1e-6 && (st.params.mu[1] + 0.2).abs() < 1e-6);
    }

    #[test]
    fn rho_without_data_is_uniform() {
        let mut st = PgspState { params: PgspParams { mu: [0.0, 1.0], tau2: 1.0, rho: 0.0, phi: 0.1 }, r: vec![] };
        let mut scale = AdaptiveScale::new(1.0);
        let mut r = rng(5);
        let mut draws: Vec<f64> = (0..500_000)
            .map(|_| update_rho(&mut st, &Sym2::default(), 0, &mut scale, &mut r))
            .step_by(5)
            .collect();
        assert!(draws.iter().all(|&v| v > -1.0 && v < 1.0));
        draws.sort_by(f64::total_cmp);
        let m = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = (x + 1.0) / 2.0;
                (cdf - i as f64 / m).abs().max((cdf - (i + 1) as f64 / m).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "ks {ks}");
    }

    #[test]
    fn tau2_prior_has_unit_mean() {
        let p = PgspPriors::default();
        let mut r = rng(6);
        let n = 200_000;
        let direct = (0..n).map(|_| inverse_gamma(p.tau2_shape, p.tau2_rate, &mut r).unwrap()).sum::<f64>() / n as f64;
        assert!((direct - 1.0).abs() < 0.02);
        let mut st = PgspState { params: PgspParams { mu: [0.0, 1.0], tau2: 1.0, rho: 0.0, phi: 0.1 }, r: vec![] };
        let mut scale = AdaptiveScale::new(-0.5);
        let chain: Vec<f64> =
            (0..1_000_000).map(|_| update_tau2(&mut st, &Sym2::default(), 0, &p, &mut scale, &mut r)).collect();
        let mcmc = chain.iter().sum::<f64>() / chain.len() as f64;
        assert!((mcmc - 1.0).abs() < 0.02, "{mcmc}");
    }

    #[test]
    fn simulate_limits() {
        let coords = [(0.0, 0.0), (4.0, 1.0), (2.0, 9.0)];
        let strong = PgspParams { mu: [1e6, 1e6], tau2: 1.0, rho: 0.3, phi: 0.1 };
        let sim = simulate_pgsp(&coords, &strong, &mut rng(7)).unwrap();
        for x in sim.sites.directions() {
            assert!(CircDistance::ArcLength.eval(*x, a(FRAC_PI_4)) < 1e-5);
        }
        let tiny = PgspParams { mu: [0.0, 0.0], tau2: 1.0, rho: 0.0, phi: 1e-5 };
        let near = [(0.0, 0.0), (0.5, 0.0)];
        let mut r = rng(8);
        for _ in 0..100 {
            let s = simulate_pgsp(&near, &tiny, &mut r).unwrap();
            let dirs = s.sites.directions();
            assert!(CircDistance::ArcLength.eval(dirs[0], dirs[1]) < 0.05);
        }
    }

    fn ks_uniform(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let m = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = x / TAU;
                (cdf - i as f64 / m).abs().max((cdf - (i + 1) as f64 / m).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn simulate_isotropic_is_uniform() {
        let p = PgspParams { mu: [0.0, 0.0], tau2: 1.0, rho: 0.0, phi: 0.1 };
        let mut r = rng(9);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| simulate_pgsp(&[(0.0, 0.0)], &p, &mut r).unwrap().sites.directions()[0].radians())
            .collect();
        assert!(ks_uniform(xs) < 0.02);
    }

    #[test]
    fn projection_is_scale_invariant() {
        let c: f64 = 2.5;
        let base = PgspParams { mu: [0.7, -0.4], tau2: 1.6, rho: 0.35, phi: 0.1 };
        let t = base.t_matrix().scale(c * c);
        let mu_scaled = [c * base.mu[0], c * base.mu[1]];
        let mut r = rng(10);
        let n = 100_000;
        let mut a0: Vec<f64> =
            (0..n).map(|_| simulate_pgsp(&[(0.0, 0.0)], &base, &mut r).unwrap().sites.directions()[0].radians()).collect();
        // Direct draws from N(cμ, c²T), an independent route to the scaled process.
        let [l11, l21, l22] = t.cholesky().unwrap();
        let mut a1: Vec<f64> = (0..n)
            .map(|_| {
                let z0: f64 = r.sample(StandardNormal);
                let z1: f64 = r.sample(StandardNormal);
                atan2_star(mu_scaled[1] + l21 * z0 + l22 * z1, mu_scaled[0] + l11 * z0).unwrap().radians()
            })
            .collect();
        a0.sort_by(f64::total_cmp);
        a1.sort_by(f64::total_cmp);
        let (mut i, mut j, mut ks) = (0usize, 0usize, 0.0f64);
        while i < n && j < n {
            if a0[i] <= a1[j] {
                i += 1;
            } else {
                j += 1;
            }
            ks = ks.max((i as f64 - j as f64).abs() / n as f64);
        }
        assert!(ks < 0.03, "ks {ks}");
    }

    #[test]
    fn fit_degenerate_direction() {
        let coords: Vec<(f64, f64)> = (0..8).map(|i| (7.0 * i as f64, 2.0 * (i % 3) as f64)).collect();
        let data = SiteTable::new(site_ids(8), coords, vec![a(2.0); 8]).unwrap();
        let cfg = ChainConfig {
            n_iter: 3000,
            burnin: 1000,
            thin: 2,
            adapt_start: 100,
            adapt_end: 1000,
            ..Default::default()
        };
        let post = fit_pgsp(&data, &PgspPriors::default(), &cfg).unwrap();
        assert!(CircDistance::ArcLength.eval(post.mean_direction().unwrap(), a(2.0)) < 0.1);
        for d in post.draws() {
            assert!(d.tau2 > 0.0 && d.rho.abs() < 1.0 && d.phi > 0.001 && d.phi < 0.9);
            assert!(d.r.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn fit_adapts_radius_scales() {
        let truth = PgspParams { mu: [1.0, 1.0], tau2: 1.0, rho: 0.3, phi: 0.05 };
        let mut r = rng(11);
        let coords: Vec<(f64, f64)> = (0..30).map(|_| (300.0 * r.random::<f64>(), 300.0 * r.random::<f64>())).collect();
        let data = simulate_pgsp(&coords, &truth, &mut r).unwrap().sites;
        let cfg = ChainConfig {
            n_iter: 4000,
            burnin: 2000,
            thin: 2,
            adapt_start: 100,
            adapt_end: 2000,
            ..Default::default()
        };
        let post = fit_pgsp(&data, &PgspPriors::default(), &cfg).unwrap();
        for chain in &post.chains {
            for (name, rate) in chain.acceptance.iter().filter(|(n, _)| n.starts_with('r')) {
                assert!(*rate > 0.1 && *rate < 0.6, "{name} {rate}");
            }
        }
    }

    proptest! {
        #[test]
        fn embedding_round_trip(t in 0.0f64..TAU, r in 1e-3f64..1e3) {
            let y = stack_embedding(&[a(t)], &[r]).unwrap();
            let (x, rr) = unstack_embedding(&y).unwrap();
            prop_assert!(CircDistance::ArcLength.eval(x[0], a(t)) < 1e-12);
            prop_assert!((rr[0] - r).abs() < 1e-12 * r);
        }
    }
}
