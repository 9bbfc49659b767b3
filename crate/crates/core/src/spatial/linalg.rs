//! Dense symmetric positive-definite linear algebra for Gaussian models.
//!
//! Matrices are small (tens to low hundreds of rows), so everything is a
//! plain row-major buffer and a hand-rolled Cholesky.

use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Diagonal shift applied once when a first factorization attempt fails.
pub const JITTER: f64 = 1e-10;

/// Factorizations whose estimated 1-norm condition number exceeds this are
/// rejected.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged matrix rows"));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, got: rhs.rows });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] = out.data[i * rhs.cols + j] + a * rhs[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch { expected: self.cols, got: v.len() });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn scale(&self, s: T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn sub(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::DimensionMismatch { expected: self.data.len(), got: rhs.data.len() });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        })
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &Matrix<T>) -> Self {
        let (p, q) = (rhs.rows, rhs.cols);
        Self::from_fn(self.rows * p, self.cols * q, |i, j| self[(i / p, j / q)] * rhs[(i % p, j % q)])
    }

    /// Sub-matrix selecting the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn norm_one(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

impl<T: Scalar> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Lower Cholesky factor `L` with `L·Lᵀ = A`, plus `ln det A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactor<T: Scalar> {
    lower: Matrix<T>,
    log_det: T,
    jittered: bool,
}

impl<T: Scalar> CovarianceFactor<T> {
    /// Factors a symmetric positive-definite matrix. A failed first attempt is
    /// retried once with [`JITTER`] on the diagonal; the estimated condition
    /// number must stay below [`MAX_CONDITION`].
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
        }
        let (lower, jittered) = match cholesky(a) {
            Ok(l) => (l, false),
            Err(_) => {
                let mut shifted = a.clone();
                for i in 0..a.nrows() {
                    shifted[(i, i)] = shifted[(i, i)] + T::lit(JITTER);
                }
                (cholesky(&shifted)?, true)
            }
        };
        let log_det = T::lit(2.0) * (0..lower.nrows()).map(|i| lower[(i, i)].ln()).sum::<T>();
        let factor = CovarianceFactor { lower, log_det, jittered };
        let cond = factor.condition_estimate(a);
        if !(cond <= T::lit(MAX_CONDITION)) {
            return Err(Error::IllConditioned(cond.to_f64().unwrap_or(f64::INFINITY)));
        }
        Ok(factor)
    }

    /// Wraps an existing lower-triangular factor without validation. Zero
    /// pivots are allowed (degenerate covariances for sampling).
    pub fn from_lower(lower: Matrix<T>) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::DimensionMismatch { expected: lower.nrows(), got: lower.ncols() });
        }
        let log_det = T::lit(2.0) * (0..lower.nrows()).map(|i| lower[(i, i)].ln()).sum::<T>();
        Ok(CovarianceFactor { lower, log_det, jittered: false })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn log_det(&self) -> T {
        self.log_det
    }

    /// Whether the diagonal jitter was needed.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        self.lower.matmul(&self.lower.transpose()).expect("square factor")
    }

    /// Solves `L·x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let l = &self.lower;
        for i in 0..b.len() {
            let s = dot(&l.row(i)[..i], &b[..i]);
            b[i] = (b[i] - s) / l[(i, i)];
        }
    }

    /// Solves `Lᵀ·x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [T]) {
        let l = &self.lower;
        let n = b.len();
        for i in (0..n).rev() {
            let mut s = T::zero();
            for k in i + 1..n {
                s = s + l[(k, i)] * b[k];
            }
            b[i] = (b[i] - s) / l[(i, i)];
        }
    }

    /// `A⁻¹·b`.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        self.check_len(b.len())?;
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        Ok(x)
    }

    /// `A⁻¹·B` column by column.
    pub fn solve_matrix(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_len(b.nrows())?;
        let mut out = Matrix::zeros(b.nrows(), b.ncols());
        let mut col = vec![T::zero(); b.nrows()];
        for j in 0..b.ncols() {
            for i in 0..b.nrows() {
                col[i] = b[(i, j)];
            }
            self.solve_lower_in_place(&mut col);
            self.solve_upper_in_place(&mut col);
            for i in 0..b.nrows() {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.solve_matrix(&Matrix::identity(self.dim())).expect("square")
    }

    /// `vᵀ·A⁻¹·v`.
    pub fn quad_form(&self, v: &[T]) -> Result<T> {
        self.check_len(v.len())?;
        let mut w = v.to_vec();
        self.solve_lower_in_place(&mut w);
        Ok(dot(&w, &w))
    }

    /// `L·z`.
    pub fn mul_lower(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z.len())?;
        let l = &self.lower;
        Ok((0..z.len()).map(|i| dot(&l.row(i)[..=i], &z[..=i])).collect())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: n });
        }
        Ok(())
    }

    /// Hager's estimate of `‖A‖₁·‖A⁻¹‖₁`.
    fn condition_estimate(&self, a: &Matrix<T>) -> T {
        let n = self.dim();
        if n == 0 {
            return T::one();
        }
        let solve = |v: &[T]| self.solve(v).expect("dimension checked");
        let mut x = vec![T::one() / T::from_usize_lossy(n); n];
        let mut est = T::zero();
        for _ in 0..5 {
            let y = solve(&x);
            let new_est = y.iter().map(|v| v.abs()).sum::<T>();
            if !new_est.is_finite() {
                return T::infinity();
            }
            let xi: Vec<T> = y.iter().map(|&v| if v >= T::zero() { T::one() } else { -T::one() }).collect();
            // A is symmetric, so A⁻ᵀ = A⁻¹.
            let z = solve(&xi);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |acc, (j, &v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc });
            if new_est <= est || zmax <= dot(&z, &x) {
                est = est.max(new_est);
                break;
            }
            est = new_est;
            x = vec![T::zero(); n];
            x[jmax] = T::one();
        }
        est * a.norm_one()
    }
}

fn cholesky<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::Factorization(format!("non-positive pivot at row {j}")));
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Conditional distribution of the unobserved block of a joint Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional<T: Scalar> {
    /// Unobserved indices, in ascending order.
    pub indices: Vec<usize>,
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

/// Conditions `N(mu_joint, cov_joint)` on the entries at `observed_idx`
/// taking `observed_vals`.
pub fn gaussian_conditional<T: Scalar>(
    mu_joint: &[T],
    cov_joint: &Matrix<T>,
    observed_idx: &[usize],
    observed_vals: &[T],
) -> Result<GaussianConditional<T>> {
    let n = mu_joint.len();
    if cov_joint.nrows() != n || cov_joint.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cov_joint.nrows() });
    }
    if observed_idx.len() != observed_vals.len() {
        return Err(Error::DimensionMismatch { expected: observed_idx.len(), got: observed_vals.len() });
    }
    let mut is_observed = vec![false; n];
    for &i in observed_idx {
        if i >= n || is_observed[i] {
            return Err(invalid(format!("observed index {i} out of range or repeated")));
        }
        is_observed[i] = true;
    }
    let unobserved: Vec<usize> = (0..n).filter(|&i| !is_observed[i]).collect();

    let s_oo = cov_joint.select(observed_idx, observed_idx);
    let s_uo = cov_joint.select(&unobserved, observed_idx);
    let s_uu = cov_joint.select(&unobserved, &unobserved);
    let factor = CovarianceFactor::new(&s_oo)?;

    let resid: Vec<T> = observed_idx.iter().zip(observed_vals).map(|(&i, &v)| v - mu_joint[i]).collect();
    let alpha = factor.solve(&resid)?;
    let mean: Vec<T> = unobserved
        .iter()
        .enumerate()
        .map(|(r, &u)| mu_joint[u] + dot(s_uo.row(r), &alpha))
        .collect();

    // Σ_uu − (L⁻¹Σ_ou)ᵀ(L⁻¹Σ_ou), symmetric by construction.
    let mut w = s_uo.transpose();
    let mut col = vec![T::zero(); w.nrows()];
    for j in 0..w.ncols() {
        for i in 0..w.nrows() {
            col[i] = w[(i, j)];
        }
        factor.solve_lower_in_place(&mut col);
        for i in 0..w.nrows() {
            w[(i, j)] = col[i];
        }
    }
    let k = unobserved.len();
    let cov = Matrix::from_fn(k, k, |i, j| {
        let mut s = s_uu[(i, j)];
        for r in 0..w.nrows() {
            s = s - w[(r, i)] * w[(r, j)];
        }
        s
    });
    Ok(GaussianConditional { indices: unobserved, mean, cov })
}

/// Draws `mean + L·z` with `z` standard normal.
pub fn mvn_sample<T: Scalar, R: Rng + ?Sized>(
    mean: &[T],
    factor: &CovarianceFactor<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    if mean.len() != factor.dim() {
        return Err(Error::DimensionMismatch { expected: factor.dim(), got: mean.len() });
    }
    let z: Vec<T> = (0..mean.len()).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    let lz = factor.mul_lower(&z)?;
    Ok(mean.iter().zip(lz).map(|(&m, v)| m + v).collect())
}

/// Log density of `N(mean, L·Lᵀ)` at `x`.
pub fn log_mvn_density<T: Scalar>(x: &[T], mean: &[T], factor: &CovarianceFactor<T>) -> Result<T> {
    if x.len() != factor.dim() || mean.len() != factor.dim() {
        return Err(Error::DimensionMismatch { expected: factor.dim(), got: x.len().max(mean.len()) });
    }
    let resid: Vec<T> = x.iter().zip(mean).map(|(&a, &b)| a - b).collect();
    let q = factor.quad_form(&resid)?;
    let n = T::from_usize_lossy(x.len());
    Ok(-T::lit(0.5) * (n * T::TAU().ln() + factor.log_det() + q))
}
