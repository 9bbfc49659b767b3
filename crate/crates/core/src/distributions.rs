//! Scalar distributions used by the samplers.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{invalid, Result};

/// `ln(2π)`.
pub const LN_TAU: f64 = 1.837_877_066_409_345_5;

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_TAU + var.ln() + z * z / var)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln P(Z > x)` for standard normal `Z`, accurate far into the tail.
pub fn log_upper_tail(x: f64) -> f64 {
    if x < 25.0 {
        return (0.5 * libm::erfc(x / std::f64::consts::SQRT_2)).ln();
    }
    // Mills-ratio asymptotic series.
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - x.ln() - 0.5 * LN_TAU + series.ln()
}

/// `ln P(a < Z < b)` for standard normal `Z`, `a < b`.
pub fn log_normal_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        let la = log_upper_tail(a);
        let lb = log_upper_tail(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b < 0.0 {
        log_normal_mass(-b, -a)
    } else {
        (1.0 - normal_cdf(a) - normal_cdf(-b)).ln()
    }
}

/// `ln Σ exp(v)`; `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Draws an index with probabilities proportional to `exp(log_weights)`.
/// `None` when no weight is positive and finite.
pub fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let total = log_sum_exp(log_weights);
    if !total.is_finite() {
        return None;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, w) in log_weights.iter().enumerate() {
        let p = (w - total).exp();
        if p > 0.0 {
            last = Some(i);
        }
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    last
}

/// Standard normal restricted to `[a, b]`, by accept-reject with uniform,
/// normal or translated-exponential proposals depending on the interval.
pub fn std_truncated_normal<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    debug_assert!(a < b);
    if b <= 0.0 {
        return -std_truncated_normal(-b, -a, rng);
    }
    if a < 0.0 {
        if b - a < 2.5 {
            // Peak density inside the interval is 1.
            loop {
                let z = a + (b - a) * rng.random::<f64>();
                if rng.random::<f64>() < (-0.5 * z * z).exp() {
                    return z;
                }
            }
        }
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a && z <= b {
                return z;
            }
        }
    }
    // 0 ≤ a < b: one-sided tail.
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    if b - a < 0.5 / alpha {
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() < (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / alpha;
        if z > b {
            continue;
        }
        if rng.random::<f64>() < (-0.5 * (z - alpha) * (z - alpha)).exp() {
            return z;
        }
    }
}

/// `N(mean, var)` restricted to `[lo, hi]`.
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, var: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let sd = var.sqrt();
    let z = std_truncated_normal((lo - mean) / sd, (hi - mean) / sd, rng);
    (mean + sd * z).clamp(lo, hi)
}

/// Inverse-gamma draw with density `∝ x^(−shape−1) exp(−rate/x)`.
pub fn inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| invalid(format!("inverse-gamma({shape}, {rate}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

/// Inverse-gamma log density.
pub fn inverse_gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - libm::lgamma(shape) - (shape + 1.0) * x.ln() - rate / x
}
