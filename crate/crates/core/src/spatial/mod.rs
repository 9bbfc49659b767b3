//! Site geometry and the exponential correlation model.

pub mod linalg;

use std::collections::HashSet;

use crate::circular::Angle;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use linalg::{dot, CovarianceFactor, Matrix};

/// Sites closer than this (km) are treated as the same location.
pub const COINCIDENT_KM: f64 = 1e-6;

/// Observed directions at planar sites. Coordinates are in km.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTable<T: Scalar> {
    site_id: Vec<String>,
    easting: Vec<T>,
    northing: Vec<T>,
    direction: Vec<Angle<T>>,
}

impl<T: Scalar> SiteTable<T> {
    pub fn new(
        site_id: Vec<String>,
        coords: Vec<(T, T)>,
        direction: Vec<Angle<T>>,
    ) -> Result<Self> {
        if site_id.len() != coords.len() || site_id.len() != direction.len() {
            return Err(invalid(format!(
                "site table columns differ in length ({} ids, {} coordinates, {} directions)",
                site_id.len(),
                coords.len(),
                direction.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &site_id {
            if !seen.insert(id.as_str()) {
                return Err(invalid(format!("duplicate site id `{id}`")));
            }
        }
        if let Some(i) = coords.iter().position(|(x, y)| !(x.is_finite() && y.is_finite())) {
            return Err(invalid(format!("non-finite coordinate for site `{}`", site_id[i])));
        }
        let (easting, northing) = coords.into_iter().unzip();
        Ok(SiteTable { site_id, easting, northing, direction })
    }

    pub fn len(&self) -> usize {
        self.site_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.site_id.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.site_id
    }

    pub fn directions(&self) -> &[Angle<T>] {
        &self.direction
    }

    pub fn coords(&self) -> Vec<(T, T)> {
        self.easting.iter().copied().zip(self.northing.iter().copied()).collect()
    }

    pub fn coord(&self, i: usize) -> (T, T) {
        (self.easting[i], self.northing[i])
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        SiteTable {
            site_id: idx.iter().map(|&i| self.site_id[i].clone()).collect(),
            easting: idx.iter().map(|&i| self.easting[i]).collect(),
            northing: idx.iter().map(|&i| self.northing[i]).collect(),
            direction: idx.iter().map(|&i| self.direction[i]).collect(),
        }
    }

    /// Same sites with every direction replaced.
    pub fn with_directions(&self, direction: Vec<Angle<T>>) -> Result<Self> {
        if direction.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: direction.len() });
        }
        Ok(SiteTable { direction, ..self.clone() })
    }

    pub fn distance_matrix(&self) -> DistanceMatrix<T> {
        distance_matrix(&self.coords()).expect("coordinates validated at construction")
    }
}

/// Symmetric matrix of pairwise Euclidean distances (km).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T: Scalar> {
    d: Matrix<T>,
    max_dist: T,
}

impl<T: Scalar> DistanceMatrix<T> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.d[(i, j)]
    }

    pub fn len(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.nrows() == 0
    }

    pub fn max_dist(&self) -> T {
        self.max_dist
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.d
    }
}

pub fn distance_matrix<T: Scalar>(coords: &[(T, T)]) -> Result<DistanceMatrix<T>> {
    if coords.is_empty() {
        return Err(Error::EmptyInput);
    }
    if coords.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(invalid("coordinates must be finite"));
    }
    let n = coords.len();
    let mut d = Matrix::zeros(n, n);
    let mut max_dist = T::zero();
    for i in 0..n {
        for j in 0..i {
            let v = euclid(coords[i], coords[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
            max_dist = max_dist.max(v);
        }
    }
    Ok(DistanceMatrix { d, max_dist })
}

#[inline]
pub fn euclid<T: Scalar>(a: (T, T), b: (T, T)) -> T {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// `exp(−φ·d)`.
pub fn exp_corr<T: Scalar>(dist: T, phi: T) -> Result<T> {
    if !(phi > T::zero()) || !phi.is_finite() {
        return Err(invalid(format!("decay must be positive and finite, got {phi}")));
    }
    if !(dist >= T::zero()) {
        return Err(invalid(format!("distance must be non-negative, got {dist}")));
    }
    Ok((-phi * dist).exp())
}

/// `R(φ)` with entries `exp(−φ·d_ij)`.
pub fn corr_matrix<T: Scalar>(d: &DistanceMatrix<T>, phi: T) -> Result<Matrix<T>> {
    exp_corr(T::zero(), phi)?;
    let n = d.len();
    let tol = T::lit(COINCIDENT_KM);
    let mut r = Matrix::identity(n);
    for i in 0..n {
        for j in 0..i {
            let dij = d.get(i, j);
            if dij < tol {
                return Err(Error::CoincidentSites(j, i));
            }
            let v = (-phi * dij).exp();
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

/// Correlations between one location and every site.
pub fn corr_vector<T: Scalar>(coords: &[(T, T)], target: (T, T), phi: T) -> Vec<T> {
    coords.iter().map(|&c| (-phi * euclid(c, target)).exp()).collect()
}

/// Factorization of `R(φ)` and the quantities every update reuses.
#[derive(Debug, Clone)]
pub struct CorrelationCache {
    pub phi: f64,
    pub factor: CovarianceFactor<f64>,
    /// `R⁻¹`.
    pub precision: Matrix<f64>,
    /// `R⁻¹1`.
    pub precision_ones: Vec<f64>,
    /// `1ᵀR⁻¹1`.
    pub ones_quad: f64,
}

impl CorrelationCache {
    pub fn new(d: &DistanceMatrix<f64>, phi: f64) -> Result<Self> {
        Ok(Self::from_factor(phi, CovarianceFactor::new(&corr_matrix(d, phi)?)?))
    }

    pub fn from_factor(phi: f64, factor: CovarianceFactor<f64>) -> Self {
        let precision = factor.inverse();
        let n = factor.dim();
        let precision_ones: Vec<f64> = (0..n).map(|i| precision.row(i).iter().sum()).collect();
        let ones_quad = precision_ones.iter().sum();
        CorrelationCache { phi, factor, precision, precision_ones, ones_quad }
    }

    pub fn len(&self) -> usize {
        self.factor.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `rᵀR⁻¹r`.
    pub fn quad(&self, resid: &[f64]) -> f64 {
        let n = resid.len();
        let mut q = 0.0;
        for i in 0..n {
            q += resid[i] * dot(self.precision.row(i), resid);
        }
        q
    }
}
