//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream selected by `(seed, task)`, so results
//! never depend on how tasks are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64, task: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}

pub fn normal_vector(rng: &mut Stream, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn normal_matrix(rng: &mut Stream, rows: usize, cols: usize) -> DMatrix<f64> {
    // row-major fill so that row i only depends on draws up to row i
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

pub fn uniform(rng: &mut Stream) -> f64 {
    rng.random::<f64>()
}
