//! Data priors and the joint (reference, counterfactual) prior.
//!
//! The joint prior over `(x, x')` has both marginals equal to the data
//! distribution `N(μ, Σ)` and cross-covariance `W`. Without immutable
//! features `W = α·Σ`; immutable coordinates are perfectly correlated:
//!
//! ```text
//! W = σσᵀ ⊙ (α − 1)·Σ + Σ,   σᵢ = 0 if feature i is immutable, 1 otherwise
//! ```
//!
//! Throughout, `sigma` is the data *covariance* and its inverse is called the
//! precision.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::gaussian::{Gaussian, IndexSet};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorSource {
    FittedFromData,
    UserSupplied,
    ScmDerived,
}

/// `x ~ N(mu, sigma)` over the modelling space.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPrior {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub source: PriorSource,
}

impl DataPrior {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, source: PriorSource) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(dim_err("prior covariance size", mu.len(), sigma.nrows()));
        }
        let sigma = linalg::checked_symmetric(&sigma)?;
        let min = linalg::min_eigenvalue(&sigma);
        if min < -1e-9 * linalg::inf_norm(&sigma).max(1.0) {
            return Err(Error::NotPsd(min));
        }
        Ok(Self { mu, sigma, source })
    }

    /// Sample mean and unbiased sample covariance of `rows`, plus `jitter·I`.
    pub fn fit(rows: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        let (m, n) = rows.shape();
        if m < 2 {
            return Err(Error::InvalidData(format!("need at least 2 rows to fit a prior, got {m}")));
        }
        if !(jitter >= 0.0) {
            return Err(Error::InvalidParameter(format!("jitter must be >= 0, got {jitter}")));
        }
        if let Some((idx, _)) = rows.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite value in column {}", idx / m)));
        }
        let mu = DVector::from_fn(n, |j, _| rows.column(j).sum() / m as f64);
        let mut sigma = DMatrix::zeros(n, n);
        for row in rows.row_iter() {
            let d = row.transpose() - &mu;
            sigma += &d * d.transpose();
        }
        sigma /= (m - 1) as f64;
        for i in 0..n {
            sigma[(i, i)] += jitter;
        }
        Ok(Self { mu, sigma: linalg::symmetrize(&sigma), source: PriorSource::FittedFromData })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn gaussian(&self) -> Result<Gaussian> {
        Gaussian::new(self.mu.clone(), self.sigma.clone())
    }

    pub fn precision(&self) -> Result<DMatrix<f64>> {
        linalg::spd_inverse(&self.sigma)
    }
}

/// Joint prior over `(x, x')`, stored as a `2n` Gaussian with the reference
/// block first.
#[derive(Debug, Clone)]
pub struct JointCfPrior {
    data: DataPrior,
    alpha: f64,
    w: DMatrix<f64>,
    immutable: Vec<bool>,
    joint: Gaussian,
}

impl JointCfPrior {
    /// Assembles the joint prior. `alpha` must lie in `[0, 1)`.
    pub fn build(data: DataPrior, alpha: f64, immutable: &[bool]) -> Result<Self> {
        let n = data.dim();
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        if immutable.len() != n {
            return Err(dim_err("immutability mask", n, immutable.len()));
        }
        let sigma = &data.sigma;
        let w = DMatrix::from_fn(n, n, |i, j| {
            if immutable[i] || immutable[j] {
                sigma[(i, j)]
            } else {
                alpha * sigma[(i, j)]
            }
        });
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        cov.view_mut((0, 0), (n, n)).copy_from(sigma);
        cov.view_mut((n, n), (n, n)).copy_from(sigma);
        cov.view_mut((0, n), (n, n)).copy_from(&w);
        cov.view_mut((n, 0), (n, n)).copy_from(&w.transpose());
        let mut mean = DVector::zeros(2 * n);
        mean.rows_mut(0, n).copy_from(&data.mu);
        mean.rows_mut(n, n).copy_from(&data.mu);
        let joint = Gaussian::new(mean, cov).map_err(|e| match e {
            Error::NotPsd(min) => Error::InvalidParameter(format!(
                "joint prior is not PSD (min eigenvalue {min:e}) for this immutability mask; \
                 raise alpha or whiten the features"
            )),
            other => other,
        })?;
        Ok(Self { data, alpha, w, immutable: immutable.to_vec(), joint })
    }

    pub fn data(&self) -> &DataPrior {
        &self.data
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Cross-covariance `cov(x, x')`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn immutable_mask(&self) -> &[bool] {
        &self.immutable
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// The assembled `2n` Gaussian over `(x, x')`.
    pub fn joint(&self) -> &Gaussian {
        &self.joint
    }

    pub fn reference_block(&self) -> IndexSet {
        IndexSet::range(0, self.dim(), 2 * self.dim()).expect("valid range")
    }

    pub fn cf_block(&self) -> IndexSet {
        IndexSet::range(self.dim(), 2 * self.dim(), 2 * self.dim()).expect("valid range")
    }

    /// `p(x | x') = N(μ + WΛ(x' − μ), Σ − WΛWᵀ)`, falling back to generic
    /// conditioning when `Σ` is singular.
    pub fn conditional_reference_given_cf(&self, x_prime: &DVector<f64>) -> Result<Gaussian> {
        self.closed_form_conditional(x_prime, false)
    }

    /// `p(x' | x) = N(μ + WᵀΛ(x − μ), Σ − WᵀΛW)`.
    pub fn conditional_cf_given_reference(&self, x: &DVector<f64>) -> Result<Gaussian> {
        self.closed_form_conditional(x, true)
    }

    fn closed_form_conditional(&self, given: &DVector<f64>, given_reference: bool) -> Result<Gaussian> {
        let n = self.dim();
        if given.len() != n {
            return Err(dim_err("conditioning point", n, given.len()));
        }
        let Ok(precision) = self.data.precision() else {
            let observed = if given_reference { self.reference_block() } else { self.cf_block() };
            return self.joint.condition(&observed, given);
        };
        let cross = if given_reference { self.w.transpose() } else { self.w.clone() };
        let gain = &cross * precision;
        let mean = &self.data.mu + &gain * (given - &self.data.mu);
        let cov = &self.data.sigma - &gain * cross.transpose();
        Gaussian::new(mean, linalg::symmetrize(&cov))
    }
}
