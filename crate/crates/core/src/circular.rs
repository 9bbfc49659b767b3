//! Angles and circular descriptive statistics.
//!
//! Directions are stored in radians on `[0, 2π)`, measured from north. Degree
//! readings are converted once, at ingestion, through [`deg_to_rad`].

use std::ops::{Add, Sub};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// A direction in radians, always in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Angle<T: Scalar>(T);

impl<T: Scalar> Angle<T> {
    /// Wraps any finite real onto `[0, 2π)`.
    pub fn new(radians: T) -> Result<Self> {
        wrap(radians)
    }

    /// Caller guarantees `radians` is finite; used on hot paths.
    #[inline]
    pub(crate) fn wrap_unchecked(radians: T) -> Self {
        let tau = T::TAU();
        let mut v = radians - tau * (radians / tau).floor();
        // floor() can leave v == tau for tiny negative inputs.
        if v >= tau || v < T::zero() {
            v = T::zero();
        }
        Angle(v)
    }

    #[inline]
    pub fn radians(self) -> T {
        self.0
    }

    pub fn degrees(self) -> T {
        self.0.to_degrees()
    }

    /// Unit-circle embedding `(cos θ, sin θ)`.
    #[inline]
    pub fn embedding(self) -> (T, T) {
        (self.0.cos(), self.0.sin())
    }

    #[inline]
    pub fn rotate(self, delta: T) -> Self {
        Self::wrap_unchecked(self.0 + delta)
    }
}

impl<T: Scalar> Add for Angle<T> {
    type Output = Angle<T>;
    fn add(self, rhs: Self) -> Self {
        Self::wrap_unchecked(self.0 + rhs.0)
    }
}

impl<T: Scalar> Sub for Angle<T> {
    type Output = Angle<T>;
    fn sub(self, rhs: Self) -> Self {
        Self::wrap_unchecked(self.0 - rhs.0)
    }
}

/// Reduces `r` modulo 2π onto `[0, 2π)`.
pub fn wrap<T: Scalar>(r: T) -> Result<Angle<T>> {
    if !r.is_finite() {
        return Err(invalid(format!("angle must be finite, got {r}")));
    }
    Ok(Angle::wrap_unchecked(r))
}

/// Meteorological degrees to a wrapped radian angle. 90° is east, 180° south.
pub fn deg_to_rad<T: Scalar>(d: T) -> Result<Angle<T>> {
    if !d.is_finite() {
        return Err(invalid(format!("angle must be finite, got {d}")));
    }
    wrap(d.to_radians())
}

/// Quadrant-aware inverse tangent mapped onto `[0, 2π)`. `s` is the sine
/// component, `c` the cosine component.
pub fn atan2_star<T: Scalar>(s: T, c: T) -> Result<Angle<T>> {
    if !(s.is_finite() && c.is_finite()) {
        return Err(invalid("atan2_star arguments must be finite"));
    }
    if s == T::zero() && c == T::zero() {
        return Err(Error::UndefinedDirection("zero-length vector".into()));
    }
    Ok(Angle::wrap_unchecked(s.atan2(c)))
}

/// Distance between two directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CircDistance {
    /// `1 − cos(a − b)`, range `[0, 2]`.
    #[default]
    OneMinusCos,
    /// Shorter arc length, range `[0, π]`.
    ArcLength,
}

impl CircDistance {
    #[inline]
    pub fn eval<T: Scalar>(self, a: Angle<T>, b: Angle<T>) -> T {
        match self {
            CircDistance::OneMinusCos => circ_dist(a, b),
            CircDistance::ArcLength => {
                let d = (a.0 - b.0).abs();
                d.min(T::TAU() - d)
            }
        }
    }
}

/// `1 − cos(a − b)`.
#[inline]
pub fn circ_dist<T: Scalar>(a: Angle<T>, b: Angle<T>) -> T {
    T::one() - (a.0 - b.0).cos()
}

fn mean_embedding<T: Scalar>(xs: &[Angle<T>]) -> Result<(T, T)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (c, s) = xs
        .iter()
        .fold((T::zero(), T::zero()), |(c, s), a| (c + a.0.cos(), s + a.0.sin()));
    let n = T::from_usize_lossy(xs.len());
    Ok((c / n, s / n))
}

/// Mean direction.
pub fn circ_mean<T: Scalar>(xs: &[Angle<T>]) -> Result<Angle<T>> {
    let (c, s) = mean_embedding(xs)?;
    // Sums of cancelling unit vectors leave rounding residue of order n·ε.
    let tol = T::epsilon() * T::lit(16.0);
    if c.hypot(s) <= tol {
        return Err(Error::UndefinedDirection("zero resultant length".into()));
    }
    atan2_star(s, c)
}

/// Mean resultant length `R̄ ∈ [0, 1]`.
pub fn circ_resultant<T: Scalar>(xs: &[Angle<T>]) -> Result<T> {
    let (c, s) = mean_embedding(xs)?;
    Ok(c.hypot(s).min(T::one()))
}

/// Observed angle minimizing the mean arc-length distance to the sample;
/// ties go to the smallest angle.
pub fn circ_median<T: Scalar>(xs: &[Angle<T>]) -> Result<Angle<T>> {
    circ_median_with(xs, CircDistance::ArcLength)
}

/// [`circ_median`] under an explicit distance.
pub fn circ_median_with<T: Scalar>(xs: &[Angle<T>], dist: CircDistance) -> Result<Angle<T>> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut candidates = xs.to_vec();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("angles are finite"));
    let tie = T::epsilon() * T::lit(64.0);
    let mut best = candidates[0];
    let mut best_cost = T::infinity();
    for &cand in &candidates {
        let cost = xs.iter().map(|&x| dist.eval(cand, x)).sum::<T>() / T::from_usize_lossy(xs.len());
        if cost < best_cost - tie {
            best = cand;
            best_cost = cost;
        }
    }
    Ok(best)
}

/// Circular descriptive statistics of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularSummary<T: Scalar> {
    pub n: usize,
    pub mean_dir: Angle<T>,
    pub median_dir: Angle<T>,
    pub resultant_length: T,
    /// `1 − R̄`.
    pub variance: T,
    /// `sqrt(−2 ln R̄)`.
    pub std_dev: T,
}

/// Circular standard deviation implied by a circular variance.
pub fn std_dev_from_variance<T: Scalar>(variance: T) -> T {
    (-T::lit(2.0) * (T::one() - variance).ln()).sqrt()
}

pub fn describe<T: Scalar>(xs: &[Angle<T>]) -> Result<CircularSummary<T>> {
    let mean_dir = circ_mean(xs)?;
    let median_dir = circ_median(xs)?;
    let r = circ_resultant(xs)?;
    let variance = T::one() - r;
    Ok(CircularSummary {
        n: xs.len(),
        mean_dir,
        median_dir,
        resultant_length: r,
        variance,
        std_dev: (-T::lit(2.0) * r.ln()).max(T::zero()).sqrt(),
    })
}

/// One bin of a rose histogram: `[start, start + width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoseBin<T: Scalar> {
    pub start: Angle<T>,
    pub count: usize,
}

/// Counts directions in `nbins` equal half-open sectors anchored at north (0 rad).
pub fn rose_histogram<T: Scalar>(xs: &[Angle<T>], nbins: usize) -> Result<Vec<RoseBin<T>>> {
    if nbins == 0 {
        return Err(invalid("rose histogram needs at least one bin"));
    }
    let width = T::TAU() / T::from_usize_lossy(nbins);
    let mut counts = vec![0usize; nbins];
    for x in xs {
        let idx = (x.0 / width).floor().to_usize().unwrap_or(0).min(nbins - 1);
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| RoseBin {
            start: Angle::wrap_unchecked(width * T::from_usize_lossy(i)),
            count,
        })
        .collect())
}
