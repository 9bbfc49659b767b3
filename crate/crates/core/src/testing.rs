//! Independent dense oracles for unit tests.

use rand::Rng;

use crate::spatial::linalg::Matrix;

/// Random SPD matrix `AᵀA + n·I`.
pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> Matrix<f64> {
    let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut m = a.transpose().matmul(&a).unwrap();
    for i in 0..n {
        m[(i, i)] += n as f64 * 0.5;
    }
    m
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn dense_inverse(a: &Matrix<f64>) -> Matrix<f64> {
    let n = a.nrows();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| aug[i][c].abs().partial_cmp(&aug[j][c].abs()).unwrap()).unwrap();
        aug.swap(c, p);
        let piv = aug[c][c];
        for v in aug[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = aug[r][c];
                let pivot_row = aug[c].clone();
                for (v, pv) in aug[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    Matrix::from_fn(n, n, |i, j| aug[i][n + j])
}

/// Determinant by Gaussian elimination.
pub fn determinant(a: &Matrix<f64>) -> f64 {
    let n = a.nrows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap()).unwrap();
        if p != c {
            m.swap(c, p);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}
