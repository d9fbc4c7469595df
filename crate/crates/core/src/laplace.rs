//! Gaussian class-conditional priors for nonlinear classifiers.
//!
//! Two stages:
//!
//! 1. The head is refit as a MAP multinomial regression on the
//!    representations of the data, with the classifier's own output
//!    probabilities as soft targets and an `N(0, I)` weight prior. The MAP
//!    weights are plugged in instead of integrating over them.
//! 2. `log p̂(target | x') + log N(x'; μ, Σ)` is maximized by multi-start Adam
//!    followed by Newton polishing; the covariance is the inverse of the
//!    finite-difference Hessian at the mode.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::gaussian::{Gaussian, IndexSet};
use crate::linalg;
use crate::models::{log_sum_exp, softmax, SplitClassifier};
use crate::optim::{adam_minimize, AdamConfig};
use crate::prior::{DataPrior, JointCfPrior};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceConfig {
    pub restarts: usize,
    pub adam: AdamConfig,
    /// Precision of the isotropic prior on head weights.
    pub head_prior_precision: f64,
    /// Diagonal shift tried before falling back to Gauss-Newton.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self { restarts: 8, adam: AdamConfig::default(), head_prior_precision: 1.0, jitter: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureSource {
    FiniteDifference,
    Jittered,
    GaussNewton,
}

#[derive(Debug, Clone)]
pub struct LaplaceClassPrior {
    pub target: usize,
    /// Gaussian over `x'` for the target class.
    pub g: Gaussian,
    /// Classifier with the refit MAP head used for the mode search.
    pub surrogate: SplitClassifier,
    /// `p̂(target | mode)` under the surrogate.
    pub mode_probability: f64,
    pub gradient_norm: f64,
    pub curvature: CurvatureSource,
    /// Always set: the head weights are a MAP plug-in, not integrated out.
    pub plug_in_weights: bool,
}

/// MAP head on `r(rows)` with the classifier's probabilities as targets.
pub fn refit_head(clf: &SplitClassifier, rows: &DMatrix<f64>, prior_precision: f64) -> Result<SplitClassifier> {
    if rows.ncols() != clf.input_dim() {
        return Err(dim_err("feature columns", clf.input_dim(), rows.ncols()));
    }
    if !(prior_precision > 0.0) {
        return Err(Error::InvalidParameter(format!("head prior precision must be > 0, got {prior_precision}")));
    }
    let m = clf.class_count();
    let h = clf.representation_dim();
    let p = h + 1;
    let feats: Vec<DVector<f64>> = rows
        .row_iter()
        .map(|r| {
            let rep = clf.representation(&r.transpose());
            DVector::from_fn(p, |i, _| if i < h { rep[i] } else { 1.0 })
        })
        .collect();
    let targets: Vec<DVector<f64>> = rows.row_iter().map(|r| clf.forward(&r.transpose())).collect();

    // θ stacks (w_c, b_c) per class
    let unpack = |theta: &DVector<f64>| DMatrix::from_fn(m, p, |c, j| theta[c * p + j]);
    let objective = |theta: &DVector<f64>| -> f64 {
        let wb = unpack(theta);
        let mut total = 0.5 * prior_precision * theta.norm_squared();
        for (f, t) in feats.iter().zip(&targets) {
            let z = &wb * f;
            let lse = log_sum_exp(&z);
            total += t.iter().zip(z.iter()).map(|(tc, zc)| tc * (lse - zc)).sum::<f64>();
        }
        total
    };

    let mut theta = DVector::zeros(m * p);
    let mut value = objective(&theta);
    for _ in 0..100 {
        let wb = unpack(&theta);
        let mut grad = &theta * prior_precision;
        let mut hess = DMatrix::identity(m * p, m * p) * prior_precision;
        for (f, t) in feats.iter().zip(&targets) {
            let prob = softmax(&(&wb * f));
            let ff = f * f.transpose();
            for c in 0..m {
                let r = prob[c] - t[c];
                for j in 0..p {
                    grad[c * p + j] += r * f[j];
                }
                for d in 0..m {
                    let w = if c == d { prob[c] * (1.0 - prob[c]) } else { -prob[c] * prob[d] };
                    let mut block = hess.view_mut((c * p, d * p), (p, p));
                    block += &ff * w;
                }
            }
        }
        if grad.amax() < 1e-10 {
            break;
        }
        let l = linalg::cholesky(&linalg::symmetrize(&hess))
            .ok_or_else(|| Error::Factorization("head refit Hessian is not positive definite".into()))?;
        let step = linalg::cholesky_solve_vec(&l, &grad);
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-10 {
            let candidate = &theta - &step * t;
            let v = objective(&candidate);
            if v <= value {
                theta = candidate;
                improved = v < value;
                value = v;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let wb = unpack(&theta);
    let mut out = clf.clone();
    out.head_weight = wb.columns(0, h).into_owned();
    out.head_bias = wb.column(h).into_owned();
    Ok(out)
}

/// `F(x') = −log p̂(target | x') + ½(x' − μ)ᵀΛ(x' − μ)` and its gradient.
struct ModeObjective<'a> {
    clf: &'a SplitClassifier,
    target: usize,
    mu: &'a DVector<f64>,
    precision: DMatrix<f64>,
}

impl ModeObjective<'_> {
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (nll, g) = self.clf.nll_input(x, self.target);
        let d = x - self.mu;
        let pd = &self.precision * &d;
        (nll + 0.5 * d.dot(&pd), g + pd)
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.eval(x).0
    }

    /// Central differences of the analytic gradient, step `1e-4·(1 + |xⱼ|)`.
    fn fd_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        for j in 0..n {
            let step = 1e-4 * (1.0 + x[j].abs());
            let mut up = x.clone();
            up[j] += step;
            let mut down = x.clone();
            down[j] -= step;
            let col = (self.eval(&up).1 - self.eval(&down).1) / (2.0 * step);
            h.column_mut(j).copy_from(&col);
        }
        linalg::symmetrize(&h)
    }

    /// `JᵀHJ + Λ` with `H` the softmax curvature; always PSD.
    fn gauss_newton(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let j = self.clf.logit_jacobian(x);
        let p = self.clf.forward(x);
        let curv = DMatrix::from_diagonal(&p) - &p * p.transpose();
        linalg::symmetrize(&(j.transpose() * curv * j + &self.precision))
    }

    /// Positive-definite curvature at `x` and where it came from.
    fn curvature(&self, x: &DVector<f64>, jitter: f64) -> (DMatrix<f64>, DMatrix<f64>, CurvatureSource) {
        let h = self.fd_hessian(x);
        if let Some(l) = linalg::cholesky(&h) {
            return (h, l, CurvatureSource::FiniteDifference);
        }
        let n = x.len();
        let shifted = &h + DMatrix::identity(n, n) * jitter;
        if let Some(l) = linalg::cholesky(&shifted) {
            return (shifted, l, CurvatureSource::Jittered);
        }
        let gn = self.gauss_newton(x);
        let l = linalg::cholesky(&gn)
            .or_else(|| linalg::cholesky(&(&gn + DMatrix::identity(n, n) * jitter)))
            .expect("Gauss-Newton curvature includes the data precision");
        (gn, l, CurvatureSource::GaussNewton)
    }

    /// Damped Newton iterations until the gradient norm drops below `1e-8`.
    fn polish(&self, mut x: DVector<f64>, jitter: f64) -> DVector<f64> {
        let (mut value, mut grad) = self.eval(&x);
        for _ in 0..100 {
            if grad.norm() <= 1e-8 {
                break;
            }
            let (_, l, _) = self.curvature(&x, jitter);
            let step = linalg::cholesky_solve_vec(&l, &grad);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let candidate = &x - &step * t;
                let (v, g) = self.eval(&candidate);
                if v.is_finite() && (v < value || (v <= value && g.norm() < grad.norm())) {
                    x = candidate;
                    value = v;
                    grad = g;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        x
    }
}

pub fn laplace_class_prior(
    clf: &SplitClassifier,
    rows: &DMatrix<f64>,
    prior: &DataPrior,
    target: usize,
    cfg: &LaplaceConfig,
) -> Result<LaplaceClassPrior> {
    if target >= clf.class_count() {
        return Err(Error::InvalidParameter(format!("target {target} exceeds class count {}", clf.class_count())));
    }
    if prior.dim() != clf.input_dim() {
        return Err(dim_err("prior", clf.input_dim(), prior.dim()));
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidParameter("at least one restart is required".into()));
    }
    let surrogate = refit_head(clf, rows, cfg.head_prior_precision)?;
    let objective = ModeObjective { clf: &surrogate, target, mu: &prior.mu, precision: prior.precision()? };
    let data = prior.gaussian()?;

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut best_probability = 0.0_f64;
    for restart in 0..cfg.restarts {
        let mut stream = rng::stream(cfg.seed, restart as u64);
        let start = data.sample_with(&mut stream, 1).row(0).transpose();
        let Ok(run) = adam_minimize(|x| objective.eval(x), &start, &cfg.adam) else {
            continue;
        };
        let mode = objective.polish(run.solution, cfg.jitter);
        let value = objective.value(&mode);
        let probability = surrogate.target_probability(&mode, target);
        best_probability = best_probability.max(probability);
        if probability < 0.5 {
            continue;
        }
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, mode));
        }
    }
    let Some((_, mode)) = best else {
        return Err(Error::ModeSearch(best_probability));
    };
    let (_, l, curvature) = objective.curvature(&mode, cfg.jitter);
    let n = mode.len();
    let cov = linalg::symmetrize(&linalg::cholesky_solve(&l, &DMatrix::identity(n, n)));
    let gradient_norm = objective.eval(&mode).1.norm();
    let mode_probability = surrogate.target_probability(&mode, target);
    Ok(LaplaceClassPrior {
        target,
        g: Gaussian::new(mode, cov)?,
        surrogate,
        mode_probability,
        gradient_norm,
        curvature,
        plug_in_weights: true,
    })
}

/// `p(x' | x) ∝ p(x | x') g(x')`, computed by assembling the `(x', x)`
/// Gaussian and conditioning on `x`.
///
/// When `Σ − WΛWᵀ` is invertible the information form
/// `Λ_post = Λ_g + GᵀC⁻¹G`, `h = Λ_g m + GᵀC⁻¹(x − μ + Gμ)` is evaluated as
/// well and returned if it agrees to `1e-6`.
pub fn posterior_laplace(class_prior: &LaplaceClassPrior, joint: &JointCfPrior, x: &DVector<f64>) -> Result<Gaussian> {
    let n = joint.dim();
    if x.len() != n || class_prior.g.dim() != n {
        return Err(dim_err("reference", n, x.len()));
    }
    let data = joint.data();
    let precision = data.precision()?;
    let g_gain = joint.w() * &precision;
    let c = linalg::symmetrize(&(&data.sigma - &g_gain * joint.w().transpose()));
    let m = class_prior.g.mean();
    let s = class_prior.g.cov();

    let mut mean = DVector::zeros(2 * n);
    mean.rows_mut(0, n).copy_from(m);
    mean.rows_mut(n, n).copy_from(&(&data.mu + &g_gain * (m - &data.mu)));
    let sg = s * g_gain.transpose();
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    cov.view_mut((0, 0), (n, n)).copy_from(s);
    cov.view_mut((0, n), (n, n)).copy_from(&sg);
    cov.view_mut((n, 0), (n, n)).copy_from(&sg.transpose());
    cov.view_mut((n, n), (n, n)).copy_from(&(&g_gain * &sg + &c));
    let assembled = Gaussian::new(mean, linalg::symmetrize(&cov))?;
    let observed = IndexSet::range(n, 2 * n, 2 * n)?;
    let oracle = assembled.condition(&observed, x)?;

    let closed = (|| -> Result<Gaussian> {
        let k = linalg::spd_inverse(&c)?;
        let lg = class_prior.g.precision()?;
        let gtk = g_gain.transpose() * k;
        let info = &lg + &gtk * &g_gain;
        let h = &lg * m + gtk * (x - &data.mu + &g_gain * &data.mu);
        let l = linalg::cholesky(&linalg::symmetrize(&info))
            .ok_or_else(|| Error::Factorization("posterior precision is singular".into()))?;
        let cov = linalg::symmetrize(&linalg::cholesky_solve(&l, &DMatrix::identity(n, n)));
        Gaussian::new(linalg::cholesky_solve_vec(&l, &h), cov)
    })();
    match closed {
        Ok(g) => {
            let scale = oracle.cov().amax().max(oracle.mean().amax()).max(1.0);
            let dm = (g.mean() - oracle.mean()).amax();
            let dc = linalg::max_abs_diff(g.cov(), oracle.cov());
            if dm <= 1e-6 * scale && dc <= 1e-6 * scale {
                Ok(g)
            } else {
                Ok(oracle)
            }
        }
        Err(_) => Ok(oracle),
    }
}
