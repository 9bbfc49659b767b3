//! Adaptive Metropolis-within-Gibbs machinery shared by both models.
//!
//! A model supplies a [`ModelKernel`] that performs one full sweep over its
//! parameters. [`run_chains`] drives independent chains, adapts the random-walk
//! scales in batches of [`ADAPT_BATCH`] iterations inside the configured
//! window, and keeps the thinned post-burnin states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::circular::{circ_mean, circ_resultant, Angle};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// RNG owned by a single chain.
pub type ChainRng = ChaCha8Rng;

/// Iterations between successive scale adaptations.
pub const ADAPT_BATCH: usize = 50;

/// PSRF threshold used to declare convergence.
pub const PSRF_THRESHOLD: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burnin: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub target_accept: f64,
    pub adapt_start: usize,
    pub adapt_end: usize,
    pub seed: u64,
    /// Upper bound on concurrently running chains; 0 runs all at once.
    /// Results do not depend on it.
    pub threads: usize,
}

impl Default for ChainConfig {
    /// Two chains of 100 000 iterations, burn-in 30 000, thinning 10, target
    /// acceptance 0.234, adaptation over iterations 100..10 000.
    fn default() -> Self {
        ChainConfig {
            n_iter: 100_000,
            burnin: 30_000,
            thin: 10,
            n_chains: 2,
            target_accept: 0.234,
            adapt_start: 100,
            adapt_end: 10_000,
            seed: 1,
            threads: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(invalid("n_iter must be positive"));
        }
        if self.burnin >= self.n_iter {
            return Err(invalid(format!("burnin ({}) must be less than n_iter ({})", self.burnin, self.n_iter)));
        }
        if self.thin == 0 {
            return Err(invalid("thin must be at least 1"));
        }
        if self.n_chains == 0 {
            return Err(invalid("n_chains must be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(invalid(format!("target_accept must be in (0, 1), got {}", self.target_accept)));
        }
        if self.adapt_start >= self.adapt_end {
            return Err(invalid(format!(
                "adapt_start ({}) must be less than adapt_end ({})",
                self.adapt_start, self.adapt_end
            )));
        }
        if self.adapt_end > self.burnin {
            return Err(invalid(format!(
                "adapt_end ({}) must not exceed burnin ({})",
                self.adapt_end, self.burnin
            )));
        }
        Ok(())
    }

    /// `floor((n_iter − burnin) / thin)`.
    pub fn retained(&self) -> usize {
        (self.n_iter - self.burnin) / self.thin
    }

    pub fn chain_seed(&self, chain: usize) -> u64 {
        self.seed.wrapping_add(chain as u64)
    }

    fn is_retained(&self, iter: usize) -> bool {
        iter > self.burnin && (iter - self.burnin) % self.thin == 0
    }
}

/// Random-walk proposal scale on the log-sd scale, with batch counters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveScale {
    pub log_sd: f64,
    /// Accepted proposals since the last adaptation.
    pub accepted: u64,
    /// Proposals since the last adaptation.
    pub proposed: u64,
    pub total_accepted: u64,
    pub total_proposed: u64,
    /// Proposals rejected because the target evaluated to NaN.
    pub nan_rejections: u64,
}

impl AdaptiveScale {
    pub fn new(log_sd: f64) -> Self {
        AdaptiveScale { log_sd, accepted: 0, proposed: 0, total_accepted: 0, total_proposed: 0, nan_rejections: 0 }
    }

    pub fn sd(&self) -> f64 {
        self.log_sd.exp()
    }

    pub fn batch_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn total_rate(&self) -> f64 {
        if self.total_proposed == 0 {
            0.0
        } else {
            self.total_accepted as f64 / self.total_proposed as f64
        }
    }

    fn reset_totals(&mut self) {
        self.total_accepted = 0;
        self.total_proposed = 0;
    }
}

impl Default for AdaptiveScale {
    fn default() -> Self {
        Self::new(0.0)
    }
}

/// Outcome of one random-walk Metropolis step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhStep {
    pub value: f64,
    /// Log target at `value`.
    pub log_target: f64,
    pub accepted: bool,
}

/// One random-walk Metropolis step `current + exp(log_sd)·z`.
pub fn rw_metropolis_step<F, R>(current: f64, log_target: F, scale: &mut AdaptiveScale, rng: &mut R) -> MhStep
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    let mut log_target = log_target;
    let lp = log_target(current);
    rw_metropolis_step_from(current, lp, log_target, scale, rng)
}

/// [`rw_metropolis_step`] with the log target at `current` already known.
pub fn rw_metropolis_step_from<F, R>(
    current: f64,
    current_lp: f64,
    mut log_target: F,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> MhStep
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    let z: f64 = rng.sample(StandardNormal);
    let proposal = current + scale.sd() * z;
    let lp = log_target(proposal);
    let u: f64 = rng.random();
    scale.proposed += 1;
    scale.total_proposed += 1;
    if lp.is_nan() {
        scale.nan_rejections += 1;
        return MhStep { value: current, log_target: current_lp, accepted: false };
    }
    if u.ln() < lp - current_lp {
        scale.accepted += 1;
        scale.total_accepted += 1;
        MhStep { value: proposal, log_target: lp, accepted: true }
    } else {
        MhStep { value: current, log_target: current_lp, accepted: false }
    }
}

/// Batch Robbins–Monro update of `log_sd` towards the target acceptance rate.
/// Only changes the scale when `adapt_start ≤ iter < adapt_end`.
pub fn adapt_scale(scale: &AdaptiveScale, iter: usize, cfg: &ChainConfig) -> AdaptiveScale {
    let mut out = scale.clone();
    if iter < cfg.adapt_start || iter >= cfg.adapt_end || iter == 0 {
        return out;
    }
    let gain = (1.0 / (iter as f64).sqrt()).min(0.05);
    let diff = scale.batch_rate() - cfg.target_accept;
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    out.log_sd += gain * sign;
    out.accepted = 0;
    out.proposed = 0;
    out
}

/// One full Gibbs sweep of a model.
pub trait ModelKernel: Sync {
    /// Working state of one chain, possibly carrying cached factorizations.
    type State: Send;
    /// What gets retained per kept iteration.
    type Draw: Send;

    /// Names of the adaptively scaled Metropolis updates, in sweep order.
    fn scale_names(&self) -> Vec<String>;

    /// Starting proposal log-sds, one per entry of [`ModelKernel::scale_names`].
    fn initial_log_sd(&self) -> Vec<f64> {
        vec![0.0; self.scale_names().len()]
    }

    fn initial_state(&self) -> Self::State;

    /// Rejects a starting state whose log-posterior is not finite, naming the
    /// offending parameter.
    fn check_state(&self, state: &Self::State) -> Result<()>;

    fn sweep(&self, state: &mut Self::State, scales: &mut [AdaptiveScale], rng: &mut ChainRng);

    fn record(&self, state: &Self::State) -> Self::Draw;

    /// Named event counters accumulated in the state.
    fn counters(&self, _state: &Self::State) -> Vec<(String, u64)> {
        Vec::new()
    }
}

/// Scale values at one adaptation boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSnapshot {
    pub iter: usize,
    pub log_sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput<S> {
    pub seed: u64,
    /// Post-burnin, thinned states.
    pub draws: Vec<S>,
    /// Post-burnin acceptance rate per adapted update, keyed like
    /// [`ModelKernel::scale_names`].
    pub acceptance: Vec<(String, f64)>,
    pub nan_rejections: Vec<(String, u64)>,
    /// Model-specific counters such as numerically skipped updates.
    pub counters: Vec<(String, u64)>,
    pub scale_history: Vec<ScaleSnapshot>,
}

fn run_one<K: ModelKernel>(kernel: &K, cfg: &ChainConfig, chain: usize) -> Result<ChainOutput<K::Draw>> {
    let seed = cfg.chain_seed(chain);
    let mut rng = ChainRng::seed_from_u64(seed);
    let mut state = kernel.initial_state();
    kernel.check_state(&state)?;
    let names = kernel.scale_names();
    let mut scales: Vec<AdaptiveScale> = kernel.initial_log_sd().into_iter().map(AdaptiveScale::new).collect();
    if scales.len() != names.len() {
        return Err(invalid("kernel scale names and initial scales differ in length"));
    }
    let mut draws = Vec::with_capacity(cfg.retained());
    let mut history = Vec::with_capacity(cfg.n_iter / ADAPT_BATCH + 1);

    for iter in 1..=cfg.n_iter {
        kernel.sweep(&mut state, &mut scales, &mut rng);
        if iter % ADAPT_BATCH == 0 {
            if iter >= cfg.adapt_start && iter < cfg.adapt_end {
                for s in scales.iter_mut() {
                    *s = adapt_scale(s, iter, cfg);
                }
            } else {
                for s in scales.iter_mut() {
                    s.accepted = 0;
                    s.proposed = 0;
                }
            }
            history.push(ScaleSnapshot { iter, log_sd: scales.iter().map(|s| s.log_sd).collect() });
        }
        if iter == cfg.burnin {
            scales.iter_mut().for_each(AdaptiveScale::reset_totals);
        }
        if cfg.is_retained(iter) {
            draws.push(kernel.record(&state));
        }
    }

    Ok(ChainOutput {
        seed,
        draws,
        acceptance: names.iter().cloned().zip(scales.iter().map(AdaptiveScale::total_rate)).collect(),
        nan_rejections: names.into_iter().zip(scales.iter().map(|s| s.nan_rejections)).collect(),
        counters: kernel.counters(&state),
        scale_history: history,
    })
}

/// Runs `cfg.n_chains` independent chains seeded `seed + chain index`.
pub fn run_chains<K: ModelKernel>(kernel: &K, cfg: &ChainConfig) -> Result<Vec<ChainOutput<K::Draw>>> {
    cfg.validate()?;
    let width = if cfg.threads == 0 { cfg.n_chains } else { cfg.threads.min(cfg.n_chains) };
    let mut outputs = Vec::with_capacity(cfg.n_chains);
    let chains: Vec<usize> = (0..cfg.n_chains).collect();
    for batch in chains.chunks(width) {
        let results: Vec<Result<ChainOutput<K::Draw>>> = std::thread::scope(|scope| {
            let handles: Vec<_> =
                batch.iter().map(|&c| scope.spawn(move || run_one(kernel, cfg, c))).collect();
            handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
        });
        for r in results {
            outputs.push(r?);
        }
    }
    Ok(outputs)
}

/// Gelman–Rubin potential scale reduction factor, floored at 1.
///
/// Returns `+∞` when every chain is constant but the chain means differ.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(invalid("psrf needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 10 {
        return Err(invalid(format!("psrf needs chains of length >= 10, got {n}")));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(invalid("psrf chains must have equal lengths"));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let within: f64 = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    let grand = means.iter().sum::<f64>() / m;
    let between = nf * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    // Constant chains: B is pure rounding noise unless the means genuinely differ.
    let scale = grand.abs().max(1.0);
    if within <= (f64::EPSILON * scale).powi(2) {
        let spread = means.iter().fold(0.0f64, |acc, mu| acc.max((mu - grand).abs()));
        return Ok(if spread <= 64.0 * f64::EPSILON * scale { 1.0 } else { f64::INFINITY });
    }
    let v_hat = (nf - 1.0) / nf * within + between / nf;
    Ok((v_hat / within).sqrt().max(1.0))
}

/// Mean direction and resultant length of circular draws.
pub fn circular_trace_summary<T: Scalar>(draws: &[Angle<T>]) -> Result<(Angle<T>, T)> {
    if draws.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok((circ_mean(draws)?, circ_resultant(draws)?))
}

/// Affine-logit map between `(lo, hi)` and the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitBounds {
    pub lo: f64,
    pub hi: f64,
}

impl LogitBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("invalid support ({lo}, {hi})")));
        }
        Ok(LogitBounds { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn to_real(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - x)).ln()
    }

    pub fn from_real(&self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) / (1.0 + (-u).exp())
    }

    /// `ln |dx/du|`.
    pub fn log_jacobian(&self, u: f64) -> f64 {
        (self.hi - self.lo).ln() - softplus(-u) - softplus(u)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// One adaptive step for a parameter confined to `bounds`, proposed on the
/// logit scale. `log_post` is the log posterior density in the original
/// parameterization; out-of-support values are never returned.
pub fn bounded_step<F, R>(
    current: f64,
    bounds: LogitBounds,
    mut log_post: F,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> MhStep
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    let mut target = |u: f64| {
        let x = bounds.from_real(u);
        if !bounds.contains(x) {
            return f64::NEG_INFINITY;
        }
        log_post(x) + bounds.log_jacobian(u)
    };
    let u0 = bounds.to_real(current);
    let lp0 = target(u0);
    let step = rw_metropolis_step_from(u0, lp0, &mut target, scale, rng);
    MhStep {
        value: if step.accepted { bounds.from_real(step.value) } else { current },
        log_target: step.log_target,
        accepted: step.accepted,
    }
}

/// One adaptive step for a positive parameter, proposed on the log scale.
pub fn positive_step<F, R>(current: f64, mut log_post: F, scale: &mut AdaptiveScale, rng: &mut R) -> MhStep
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    let mut target = |u: f64| {
        let x = u.exp();
        if !(x > 0.0 && x.is_finite()) {
            return f64::NEG_INFINITY;
        }
        log_post(x) + u
    };
    let u0 = current.ln();
    let lp0 = target(u0);
    let step = rw_metropolis_step_from(u0, lp0, &mut target, scale, rng);
    MhStep {
        value: if step.accepted { step.value.exp() } else { current },
        log_target: step.log_target,
        accepted: step.accepted,
    }
}

/// Point estimate and equal-tailed credible interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParamSummary {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Linear-interpolation sample quantile of sorted data, `p ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and central `level` interval of scalar draws.
pub fn linear_summary(draws: &[f64], level: f64) -> Result<ParamSummary> {
    if draws.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!("credible level must be in (0, 1), got {level}")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok(ParamSummary {
        mean: draws.iter().sum::<f64>() / draws.len() as f64,
        lower: quantile_sorted(&sorted, tail),
        upper: quantile_sorted(&sorted, 1.0 - tail),
    })
}

/// Circular mean and central `level` interval of angle draws. The interval is
/// formed on deviations from the mean in `(−π, π]`, so `lower` may exceed
/// `upper` numerically when it straddles north; bounds are reported in
/// `[0, 2π)`.
pub fn circular_summary(draws: &[Angle<f64>], level: f64) -> Result<ParamSummary> {
    let centre = circ_mean(draws)?;
    let dev: Vec<f64> = draws.iter().map(|a| signed_deviation(*a, centre)).collect();
    let s = linear_summary(&dev, level)?;
    Ok(ParamSummary {
        mean: centre.radians(),
        lower: centre.rotate(s.lower).radians(),
        upper: centre.rotate(s.upper).radians(),
    })
}

/// `a − b` reduced to `(−π, π]`.
pub fn signed_deviation(a: Angle<f64>, b: Angle<f64>) -> f64 {
    let d = (a - b).radians();
    if d > std::f64::consts::PI {
        d - std::f64::consts::TAU
    } else {
        d
    }
}

/// Whether `value` lies on the arc from `s.lower` counter-clockwise to `s.upper`.
pub fn circular_covers(s: &ParamSummary, value: Angle<f64>) -> bool {
    let lo = Angle::wrap_unchecked(s.lower);
    let width = (Angle::wrap_unchecked(s.upper) - lo).radians();
    (value - lo).radians() <= width
}
