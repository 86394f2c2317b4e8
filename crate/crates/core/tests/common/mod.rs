//! Independent oracles shared by the integration and acceptance suites.
//!
//! Nothing here calls into the code paths it is used to check: the ridge
//! oracle inverts with plain Gauss-Jordan on `Vec<Vec<f64>>`, the gradient
//! oracle uses central differences of the scalar similarity, and gradient
//! descent reaches the ridge optimum without any linear solve.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

/// Inverse of a square matrix by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular matrix in oracle");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let factor = aug[r][col];
                if factor != 0.0 {
                    for k in 0..2 * n {
                        aug[r][k] -= factor * aug[col][k];
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Dense normal-equations ridge oracle: `Theta = Z^T F (F^T F + lambda I)^-1`
/// using only nested loops.
pub fn naive_ridge(f: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> Vec<Vec<f64>> {
    let (n_samples, m) = f.shape();
    let n = z.ncols();
    let mut gram = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let mut s = 0.0;
            for k in 0..n_samples {
                s += f[(k, i)] * f[(k, j)];
            }
            gram[i][j] = s + if i == j { lambda } else { 0.0 };
        }
    }
    let inv = gauss_jordan_inverse(&gram);
    let mut ztf = vec![vec![0.0; m]; n];
    for a in 0..n {
        for j in 0..m {
            ztf[a][j] = (0..n_samples).map(|k| z[(k, a)] * f[(k, j)]).sum();
        }
    }
    (0..n)
        .map(|a| (0..m).map(|j| (0..m).map(|k| ztf[a][k] * inv[k][j]).sum()).collect())
        .collect()
}

/// Plain gradient descent on `sum_i ||Theta f_i - z_i||^2 + lambda ||Theta||^2`.
pub fn gradient_descent_ridge(f: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64, iterations: usize) -> DMatrix<f64> {
    let gram = f.transpose() * f;
    let ztf = z.transpose() * f;
    // Lipschitz constant of the gradient: 2 (lambda_max(F^T F) + lambda).
    let lmax = gram.symmetric_eigenvalues().max();
    let step = 1.0 / (2.0 * (lmax + lambda));
    let mut theta = DMatrix::zeros(z.ncols(), f.ncols());
    for _ in 0..iterations {
        let grad = (&theta * &gram - &ztf) * 2.0 + &theta * (2.0 * lambda);
        theta -= grad * step;
    }
    theta
}

/// Cosine similarity of `theta f` and `z`, computed directly.
pub fn cosine_of(theta: &DMatrix<f64>, f: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let y = theta * f;
    y.dot(z) / (y.norm() * z.norm())
}

/// Central finite-difference gradient of the cosine similarity.
pub fn finite_difference_gradient(theta: &DMatrix<f64>, f: &DVector<f64>, z: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(f.len(), |i, _| {
        let mut plus = f.clone();
        let mut minus = f.clone();
        plus[i] += h;
        minus[i] -= h;
        (cosine_of(theta, &plus, z) - cosine_of(theta, &minus, z)) / (2.0 * h)
    })
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}
