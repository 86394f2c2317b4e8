//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from xoshiro256++ seeded through
//! splitmix64 (`seed_from_u64`), so results are bit-reproducible across
//! platforms. Per-sample streams use `seed ^ sample_id`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SeededRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> SeededRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Stream for one sample of a batch; independent of scheduling order.
pub fn sample_stream(seed: u64, sample_id: u64) -> SeededRng {
    seeded(seed ^ sample_id)
}

pub fn gaussian_vector(rng: &mut SeededRng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Row-major fill order so the stream layout matches the on-disk layout.
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}
