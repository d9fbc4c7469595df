//! Seeded synthetic classification datasets.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: DMatrix<f64>,
    pub labels: Vec<usize>,
}

/// Draws `counts[c]` rows from `N(means[c], L·Lᵀ)` for each class `c`,
/// class blocks in order.
pub fn gaussian_classes(means: &[DVector<f64>], factor: &DMatrix<f64>, counts: &[usize], seed: u64) -> Dataset {
    let d = factor.nrows();
    let total = counts.iter().sum();
    let mut rows = DMatrix::zeros(total, d);
    let mut labels = Vec::with_capacity(total);
    let mut stream = rng::stream(seed, 0);
    for (c, (mean, &count)) in means.iter().zip(counts).enumerate() {
        for _ in 0..count {
            let z = rng::normal_vector(&mut stream, d);
            let x = mean + factor * z;
            rows.row_mut(labels.len()).copy_from(&x.transpose());
            labels.push(c);
        }
    }
    Dataset { rows, labels }
}

/// Two isotropic unit-variance blobs at `±(separation/2, 0)`.
pub fn two_blobs(per_class: usize, separation: f64, seed: u64) -> Dataset {
    let h = separation / 2.0;
    let means = [DVector::from_vec(alloc::vec![-h, 0.0]), DVector::from_vec(alloc::vec![h, 0.0])];
    gaussian_classes(&means, &DMatrix::identity(2, 2), &[per_class, per_class], seed)
}

/// Two classes sharing the covariance `diag(1, 1/16)`, class means at
/// `∓(1, 0.5)` and `counts[c]` rows in class `c`.
///
/// The discriminant direction `Σ⁻¹Δ = (2, 16)` is nearly vertical while the
/// mean difference `Δ = (2, 1)` is not, so the euclidean shortest route to
/// the boundary lands far from the target class mass.
pub fn anisotropic_two_class(counts: [usize; 2], seed: u64) -> Dataset {
    let factor = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![1.0, 0.25]));
    let means = [DVector::from_vec(alloc::vec![-1.0, -0.5]), DVector::from_vec(alloc::vec![1.0, 0.5])];
    gaussian_classes(&means, &factor, &counts, seed)
}
