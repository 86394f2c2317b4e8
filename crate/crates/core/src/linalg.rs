//! Small dense helpers shared by the numeric modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn check_len(context: &'static str, expected: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

pub fn upcast(m: &DMatrix<f32>) -> DMatrix<f64> {
    m.map(f64::from)
}

pub fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Row-major flattening, the order used for every tensor on disk.
pub fn to_row_major<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rescales `v` to Euclidean norm `target`. Fails on the zero vector.
pub fn rescale_to_norm(v: &DVector<f64>, target: f64, context: &str) -> Result<DVector<f64>> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm(context.to_string()));
    }
    Ok(v * (target / n))
}
