//! Exact counterfactual posteriors for linear-Gaussian decision models.
//!
//! Three dependency structures are covered:
//!
//! * `pgm1`: the counterfactual is a noisy copy of the reference,
//!   `x' ~ N(x, W⁻¹)`; this is what a Wachter-style objective optimizes.
//! * `pgm2`: reference and counterfactual are jointly Gaussian with shared
//!   data marginals (see [`JointCfPrior`]).
//! * `pgm3`: `pgm1` with an additional Gaussian regularizer towards the data.
//!
//! The closed forms are cross-checked against [`posterior_via_joint`], which
//! assembles the full `(x', x, y')` Gaussian and conditions on `(x, y')`.

use alloc::format;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::gaussian::{Gaussian, IndexSet};
use crate::linalg;
use crate::prior::{DataPrior, JointCfPrior};

/// `y ~ N(A·x + b, L⁻¹)` where `L` is the residual precision.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLikelihood {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub l: DMatrix<f64>,
}

impl LinearLikelihood {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, l: DMatrix<f64>) -> Result<Self> {
        let k = a.nrows();
        if b.len() != k {
            return Err(dim_err("likelihood intercept", k, b.len()));
        }
        if l.nrows() != k || l.ncols() != k {
            return Err(dim_err("likelihood precision size", k, l.nrows()));
        }
        let l = linalg::checked_symmetric(&l)?;
        let min = linalg::min_eigenvalue(&l);
        if min < -1e-9 * linalg::inf_norm(&l).max(1.0) {
            return Err(Error::NotPsd(min));
        }
        Ok(Self { a, b, l })
    }

    pub fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    fn check(&self, x: &DVector<f64>, y_prime: &DVector<f64>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(dim_err("reference", self.input_dim(), x.len()));
        }
        if y_prime.len() != self.output_dim() {
            return Err(dim_err("desired output", self.output_dim(), y_prime.len()));
        }
        Ok(())
    }

    /// `(AᵀLA, AᵀL(y' − b))`.
    fn information(&self, y_prime: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let atl = self.a.transpose() * &self.l;
        (&atl * &self.a, atl * (y_prime - &self.b))
    }
}

/// Gaussian with precision `precision` and information vector `h`.
fn from_information(precision: &DMatrix<f64>, h: &DVector<f64>) -> Result<Gaussian> {
    let p = linalg::symmetrize(precision);
    let l = linalg::cholesky(&p)
        .ok_or_else(|| Error::Factorization("posterior precision is singular".into()))?;
    let n = p.nrows();
    let cov = linalg::symmetrize(&linalg::cholesky_solve(&l, &DMatrix::identity(n, n)));
    let mean = linalg::cholesky_solve_vec(&l, h);
    Gaussian::new(mean, cov)
}

/// Posterior when the counterfactual is drawn around the reference with
/// precision `w_prec`: `Λ_cf = W + AᵀLA`, `μ_cf = Λ_cf⁻¹(AᵀL(y' − b) + Wx)`.
pub fn posterior_pgm1(
    lik: &LinearLikelihood,
    x: &DVector<f64>,
    y_prime: &DVector<f64>,
    w_prec: &DMatrix<f64>,
) -> Result<Gaussian> {
    lik.check(x, y_prime)?;
    if w_prec.shape() != (x.len(), x.len()) {
        return Err(dim_err("similarity precision size", x.len(), w_prec.nrows()));
    }
    let (ata, h) = lik.information(y_prime);
    from_information(&(w_prec + ata), &(h + w_prec * x))
}

/// Regularized variant with prior precision given directly (may be zero).
pub fn posterior_pgm3_with_precision(
    lik: &LinearLikelihood,
    mu: &DVector<f64>,
    precision: &DMatrix<f64>,
    x: &DVector<f64>,
    y_prime: &DVector<f64>,
    w_prec: &DMatrix<f64>,
) -> Result<Gaussian> {
    lik.check(x, y_prime)?;
    let n = x.len();
    if w_prec.shape() != (n, n) || precision.shape() != (n, n) || mu.len() != n {
        return Err(Error::Dimension(format!("pgm3 expects {n}-dimensional prior and similarity terms")));
    }
    let (ata, h) = lik.information(y_prime);
    from_information(&(ata + w_prec + precision), &(h + w_prec * x + precision * mu))
}

/// `Λ_cf = AᵀLA + W + Λ`, `μ_cf = Λ_cf⁻¹(AᵀL(y' − b) + Wx + Λμ)`.
pub fn posterior_pgm3(
    lik: &LinearLikelihood,
    prior: &DataPrior,
    x: &DVector<f64>,
    y_prime: &DVector<f64>,
    w_prec: &DMatrix<f64>,
) -> Result<Gaussian> {
    let precision = prior.precision()?;
    posterior_pgm3_with_precision(lik, &prior.mu, &precision, x, y_prime, w_prec)
}

/// Closed form under the joint prior; fails when `Σ` or `Σ − WΛWᵀ` is singular.
///
/// With `G = WΛ` and `K = (Σ − WΛWᵀ)⁻¹`:
/// `Λ_cf = AᵀLA + GᵀKG + Λ`,
/// `h = AᵀL(y' − b) + GᵀK(x − μ + Gμ) + Λμ`.
pub fn posterior_pgm2_closed_form(
    lik: &LinearLikelihood,
    joint: &JointCfPrior,
    x: &DVector<f64>,
    y_prime: &DVector<f64>,
) -> Result<Gaussian> {
    lik.check(x, y_prime)?;
    if x.len() != joint.dim() {
        return Err(dim_err("reference", joint.dim(), x.len()));
    }
    let data = joint.data();
    let precision = data.precision()?;
    let g = joint.w() * &precision;
    let conditional_cov = linalg::symmetrize(&(&data.sigma - &g * joint.w().transpose()));
    let k = linalg::spd_inverse(&conditional_cov)?;
    let (ata, h) = lik.information(y_prime);
    let gtk = g.transpose() * k;
    let info = ata + &gtk * &g + &precision;
    let h = h + gtk * (x - &data.mu + &g * &data.mu) + &precision * &data.mu;
    from_information(&info, &h)
}

/// Posterior under the joint prior. Uses the closed form when the joint is
/// full rank and it agrees with [`posterior_via_joint`] to `1e-6`; otherwise
/// the assembled-joint result is returned.
pub fn posterior_pgm2(
    lik: &LinearLikelihood,
    joint: &JointCfPrior,
    x: &DVector<f64>,
    y_prime: &DVector<f64>,
) -> Result<Gaussian> {
    let oracle = posterior_via_joint(lik, joint, x, y_prime)?;
    match posterior_pgm2_closed_form(lik, joint, x, y_prime) {
        Ok(closed) if agree(&closed, &oracle, 1e-6) => Ok(closed),
        _ => Ok(oracle),
    }
}

fn agree(a: &Gaussian, b: &Gaussian, tol: f64) -> bool {
    let scale = b.cov().amax().max(b.mean().amax()).max(1.0);
    let dm = (a.mean() - b.mean()).amax();
    let dc = linalg::max_abs_diff(a.cov(), b.cov());
    dm <= tol * scale && dc <= tol * scale
}

/// Exact posterior by assembling the Gaussian over `(x', x, y')` and
/// conditioning on the observed `(x, y')`.
///
/// Directions of `y'` that `L` leaves unconstrained (zero precision) carry no
/// information and are dropped before conditioning.
pub fn posterior_via_joint(
    lik: &LinearLikelihood,
    joint: &JointCfPrior,
    x: &DVector<f64>,
    y_prime: &DVector<f64>,
) -> Result<Gaussian> {
    lik.check(x, y_prime)?;
    let n = joint.dim();
    if x.len() != n {
        return Err(dim_err("reference", n, x.len()));
    }
    let data = joint.data();
    let sigma = &data.sigma;
    let w = joint.w();

    // observed directions of y' and their noise variances
    let (values, vectors) = linalg::sym_eigen(&lik.l);
    let cutoff = 1e-12 * values.amax().max(f64::MIN_POSITIVE);
    let kept: alloc::vec::Vec<usize> = (0..values.len()).filter(|&i| values[i] > cutoff).collect();
    let r = kept.len();
    let u = DMatrix::from_fn(lik.output_dim(), r, |i, j| vectors[(i, kept[j])]);
    let noise = DMatrix::from_diagonal(&DVector::from_fn(r, |j, _| 1.0 / values[kept[j]]));
    let ua = u.transpose() * &lik.a;

    let dim = 2 * n + r;
    let mut mean = DVector::zeros(dim);
    mean.rows_mut(0, n).copy_from(&data.mu);
    mean.rows_mut(n, n).copy_from(&data.mu);
    mean.rows_mut(2 * n, r).copy_from(&(&ua * &data.mu + u.transpose() * &lik.b));

    let mut cov = DMatrix::zeros(dim, dim);
    let cf_z = sigma * ua.transpose();
    let ref_z = w * ua.transpose();
    let zz = &ua * sigma * ua.transpose() + noise;
    cov.view_mut((0, 0), (n, n)).copy_from(sigma);
    cov.view_mut((0, n), (n, n)).copy_from(&w.transpose());
    cov.view_mut((n, 0), (n, n)).copy_from(w);
    cov.view_mut((n, n), (n, n)).copy_from(sigma);
    cov.view_mut((0, 2 * n), (n, r)).copy_from(&cf_z);
    cov.view_mut((2 * n, 0), (r, n)).copy_from(&cf_z.transpose());
    cov.view_mut((n, 2 * n), (n, r)).copy_from(&ref_z);
    cov.view_mut((2 * n, n), (r, n)).copy_from(&ref_z.transpose());
    cov.view_mut((2 * n, 2 * n), (r, r)).copy_from(&zz);

    let assembled = Gaussian::new(mean, linalg::symmetrize(&cov))?;
    let observed = IndexSet::range(n, dim, dim)?;
    let mut values = DVector::zeros(n + r);
    values.rows_mut(0, n).copy_from(x);
    values.rows_mut(n, r).copy_from(&(u.transpose() * y_prime));
    assembled.condition(&observed, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PriorSource;
    use alloc::vec;
    use alloc::vec::Vec;
    use nalgebra::{dmatrix, dvector};

    fn scalar_lik(l: f64) -> LinearLikelihood {
        LinearLikelihood::new(dmatrix![1.0], dvector![0.0], dmatrix![l]).unwrap()
    }

    fn scalar_joint(alpha: f64) -> JointCfPrior {
        let p = DataPrior::new(dvector![0.0], dmatrix![1.0], PriorSource::UserSupplied).unwrap();
        JointCfPrior::build(p, alpha, &[false]).unwrap()
    }

    /// Mean and variance of an unnormalized 1-D density by trapezoid rule.
    fn quadrature_moments(density: impl Fn(f64) -> f64) -> (f64, f64) {
        let (lo, hi, n) = (-15.0, 15.0, 60_001);
        let h = (hi - lo) / (n - 1) as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let t = lo + i as f64 * h;
            let wgt = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let d = density(t) * wgt;
            z += d;
            m1 += d * t;
            m2 += d * t * t;
        }
        let mean = m1 / z;
        (mean, m2 / z - mean * mean)
    }

    fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
        (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * core::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn pgm1_scalar_matches_quadrature() {
        let g = posterior_pgm1(&scalar_lik(1.0), &dvector![0.0], &dvector![2.0], &dmatrix![1.0]).unwrap();
        assert!((g.mean()[0] - 1.0).abs() < 1e-12);
        assert!((g.cov()[(0, 0)] - 0.5).abs() < 1e-12);
        let (m, v) = quadrature_moments(|t| normal_pdf(2.0, t, 1.0) * normal_pdf(t, 0.0, 1.0));
        assert!((m - 1.0).abs() < 1e-6 && (v - 0.5).abs() < 1e-6);
    }

    #[test]
    fn pgm1_limits() {
        let x = dvector![0.7, -0.2];
        let lik = LinearLikelihood::new(dmatrix![1.0, 2.0], dvector![0.5], dmatrix![0.0]).unwrap();
        let w = dmatrix![2.0, 0.5; 0.5, 1.0];
        let g = posterior_pgm1(&lik, &x, &dvector![3.0], &w).unwrap();
        assert!((g.mean() - &x).amax() < 1e-12);
        assert!(linalg::max_abs_diff(g.cov(), &linalg::spd_inverse(&w).unwrap()) < 1e-12);

        let lik = LinearLikelihood::new(dmatrix![1.0, 2.0], dvector![0.5], dmatrix![1.0]).unwrap();
        let g = posterior_pgm1(&lik, &x, &dvector![3.0], &(DMatrix::identity(2, 2) * 1e6)).unwrap();
        assert!((g.mean() - &x).amax() < 1e-4);
    }

    #[test]
    fn pgm2_scalar_hand_values() {
        let lik = scalar_lik(1.0);
        for x in [5.0, -3.0] {
            let g = posterior_pgm2(&lik, &scalar_joint(0.0), &dvector![x], &dvector![2.0]).unwrap();
            assert!((g.mean()[0] - 1.0).abs() < 1e-12);
            assert!((g.cov()[(0, 0)] - 0.5).abs() < 1e-12);
        }
        let g = posterior_pgm2(&lik, &scalar_joint(0.5), &dvector![1.0], &dvector![2.0]).unwrap();
        assert!((g.mean()[0] - 8.0 / 7.0).abs() < 1e-12);
        assert!((g.cov()[(0, 0)] - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn pgm2_without_likelihood_is_data_prior() {
        let sigma = dmatrix![2.0, 0.4; 0.4, 1.0];
        let p = DataPrior::new(dvector![1.0, -2.0], sigma.clone(), PriorSource::UserSupplied).unwrap();
        let joint = JointCfPrior::build(p, 0.0, &[false, false]).unwrap();
        let lik = LinearLikelihood::new(dmatrix![1.0, 1.0], dvector![0.0], dmatrix![0.0]).unwrap();
        let g = posterior_pgm2(&lik, &joint, &dvector![4.0, 4.0], &dvector![9.0]).unwrap();
        assert!((g.mean() - dvector![1.0, -2.0]).amax() < 1e-12);
        assert!(linalg::max_abs_diff(g.cov(), &sigma) < 1e-12);
    }

    #[test]
    fn pgm2_closed_form_handles_nonzero_mean() {
        let sigma = dmatrix![1.5, 0.3, 0.0; 0.3, 1.0, -0.2; 0.0, -0.2, 0.8];
        let p = DataPrior::new(dvector![1.0, -2.0, 0.5], sigma, PriorSource::UserSupplied).unwrap();
        let joint = JointCfPrior::build(p, 0.6, &[false; 3]).unwrap();
        let lik = LinearLikelihood::new(dmatrix![1.0, -1.0, 2.0], dvector![0.3], dmatrix![2.0]).unwrap();
        let x = dvector![0.2, 0.1, -1.0];
        let closed = posterior_pgm2_closed_form(&lik, &joint, &x, &dvector![4.0]).unwrap();
        let oracle = posterior_via_joint(&lik, &joint, &x, &dvector![4.0]).unwrap();
        assert!((closed.mean() - oracle.mean()).amax() < 1e-10);
        assert!(linalg::max_abs_diff(closed.cov(), oracle.cov()) < 1e-10);
    }

    #[test]
    fn pgm2_masked_joint_uses_oracle() {
        let p = DataPrior::new(dvector![0.0, 0.0], DMatrix::identity(2, 2), PriorSource::UserSupplied).unwrap();
        let joint = JointCfPrior::build(p, 0.5, &[true, false]).unwrap();
        let lik = LinearLikelihood::new(dmatrix![1.0, 1.0], dvector![0.0], dmatrix![1.0]).unwrap();
        assert!(posterior_pgm2_closed_form(&lik, &joint, &dvector![0.4, 0.0], &dvector![3.0]).is_err());
        let g = posterior_pgm2(&lik, &joint, &dvector![0.4, 0.0], &dvector![3.0]).unwrap();
        assert!((g.mean()[0] - 0.4).abs() < 1e-12);
        assert!(g.cov()[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn exact_observation_limit() {
        let p = DataPrior::new(dvector![0.0, 0.0], DMatrix::identity(2, 2), PriorSource::UserSupplied).unwrap();
        let joint = JointCfPrior::build(p, 0.3, &[false, false]).unwrap();
        let lik = LinearLikelihood::new(DMatrix::identity(2, 2), dvector![0.0, 0.0], DMatrix::identity(2, 2) * 1e8)
            .unwrap();
        let g = posterior_via_joint(&lik, &joint, &dvector![1.0, 1.0], &dvector![3.0, -2.0]).unwrap();
        assert!((g.mean() - dvector![3.0, -2.0]).amax() < 1e-6);
    }

    #[test]
    fn pgm3_scalar_and_reductions() {
        let lik = scalar_lik(1.0);
        let prior = DataPrior::new(dvector![0.0], dmatrix![1.0], PriorSource::UserSupplied).unwrap();
        let g = posterior_pgm3(&lik, &prior, &dvector![0.0], &dvector![2.0], &dmatrix![1.0]).unwrap();
        assert!((g.mean()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((g.cov()[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        let (m, v) = quadrature_moments(|t| {
            normal_pdf(2.0, t, 1.0) * normal_pdf(t, 0.0, 1.0) * normal_pdf(t, 0.0, 1.0)
        });
        assert!((m - 2.0 / 3.0).abs() < 1e-6 && (v - 1.0 / 3.0).abs() < 1e-6);

        // W = 0 coincides with pgm2 at alpha = 0
        let x = dvector![3.0];
        let a = posterior_pgm3(&lik, &prior, &x, &dvector![2.0], &dmatrix![0.0]).unwrap();
        let b = posterior_pgm2(&lik, &scalar_joint(0.0), &x, &dvector![2.0]).unwrap();
        assert!((a.mean() - b.mean()).amax() < 1e-12);

        // zero prior precision coincides with pgm1
        let lik2 = LinearLikelihood::new(dmatrix![2.0, -3.0], dvector![5.0], dmatrix![1.0]).unwrap();
        let w = DMatrix::identity(2, 2);
        let x2 = dvector![0.5, 0.5];
        let a = posterior_pgm3_with_precision(&lik2, &dvector![0.0, 0.0], &DMatrix::zeros(2, 2), &x2, &dvector![10.0], &w)
            .unwrap();
        let b = posterior_pgm1(&lik2, &x2, &dvector![10.0], &w).unwrap();
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.cov(), b.cov());
    }

    #[test]
    fn precision_dominance() {
        let sigma = dmatrix![1.0, 0.5; 0.5, 2.0];
        let p = DataPrior::new(dvector![0.0, 1.0], sigma, PriorSource::UserSupplied).unwrap();
        let lam = p.precision().unwrap();
        let joint = JointCfPrior::build(p, 0.7, &[false, false]).unwrap();
        let lik = LinearLikelihood::new(dmatrix![1.0, 0.0], dvector![0.0], dmatrix![3.0]).unwrap();
        let g = posterior_pgm2(&lik, &joint, &dvector![1.0, 1.0], &dvector![2.0]).unwrap();
        let info = g.precision().unwrap();
        assert!(linalg::min_eigenvalue(&(info - lam)) > -1e-8);
    }

    #[test]
    fn alpha_sweep_moves_towards_reference() {
        // y' equals the reference's own prediction
        let lik = scalar_lik(1.0);
        let x = dvector![2.0];
        let mut means: Vec<f64> = Vec::new();
        for i in 0..10 {
            let alpha = i as f64 / 10.0;
            let g = posterior_pgm2(&lik, &scalar_joint(alpha), &x, &lik.predict(&x)).unwrap();
            means.push(g.mean()[0]);
        }
        assert!(means.windows(2).all(|w| (w[1] - x[0]).abs() <= (w[0] - x[0]).abs() + 1e-12));
    }
}
