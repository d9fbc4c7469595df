//! Counterfactual objectives and their gradients.
//!
//! * wachter: `φ·fid(x̃) + γ‖x − x̃‖²`
//! * ours: `x̃ᵀΛx̃ − 2x̃ᵀΛ((1−α)μ + αx) + γ·fid(x̃)`
//! * regularized: `φ·fid(x̃) + γ‖x − x̃‖² + (x̃ − μ)ᵀ(γ₂·diag Λ)(x̃ − μ)`
//!
//! where `fid` is the classifier NLL of the target class or the
//! `L`-weighted squared error of a linear model, and `φ` is
//! [`ObjectiveConfig::fidelity_weight`].

use alloc::format;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::models::SplitClassifier;
use crate::optim::{adam_minimize, AdamConfig, AdamOutcome};
use crate::posterior::LinearLikelihood;
use crate::prior::DataPrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Wachter,
    Ours,
    Regularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub variant: Variant,
    /// Distance weight (wachter, regularized) or fidelity weight (ours).
    pub gamma: f64,
    pub alpha: f64,
    /// Weight of the diversity penalty when several points are optimized jointly.
    pub lambda_div: f64,
    /// `γ₂` of the regularized variant.
    pub reg_weight: f64,
    /// Weight on the fidelity term for wachter and regularized.
    pub fidelity_weight: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { variant: Variant::Ours, gamma: 1.0, alpha: 0.5, lambda_div: 0.0, reg_weight: 1.0, fidelity_weight: 1.0 }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gamma", self.gamma),
            ("lambda_div", self.lambda_div),
            ("reg_weight", self.reg_weight),
            ("fidelity_weight", self.fidelity_weight),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// How well a candidate achieves the desired outcome (lower is better).
#[derive(Debug, Clone, Copy)]
pub enum Fidelity<'a> {
    /// `−log p(target | x̃)`.
    Classifier { clf: &'a SplitClassifier, target: usize },
    /// `(y' − Ax̃ − b)ᵀ L (y' − Ax̃ − b)`.
    Linear { lik: &'a LinearLikelihood, y_prime: &'a DVector<f64> },
}

impl Fidelity<'_> {
    pub fn eval(&self, xt: &DVector<f64>) -> (f64, DVector<f64>) {
        match *self {
            Fidelity::Classifier { clf, target } => clf.nll_input(xt, target),
            Fidelity::Linear { lik, y_prime } => {
                let r = y_prime - lik.predict(xt);
                let lr = &lik.l * &r;
                (r.dot(&lr), lik.a.tr_mul(&lr) * -2.0)
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            Fidelity::Classifier { clf, .. } => clf.input_dim(),
            Fidelity::Linear { lik, .. } => lik.input_dim(),
        }
    }
}

pub fn wachter_loss(xt: &DVector<f64>, x: &DVector<f64>, fid: &Fidelity, cfg: &ObjectiveConfig) -> (f64, DVector<f64>) {
    let (f, gf) = fid.eval(xt);
    let d = xt - x;
    let value = cfg.fidelity_weight * f + cfg.gamma * d.norm_squared();
    (value, gf * cfg.fidelity_weight + d * (2.0 * cfg.gamma))
}

/// `precision` is the data precision `Λ`.
pub fn ours_loss(
    xt: &DVector<f64>,
    x: &DVector<f64>,
    fid: &Fidelity,
    mu: &DVector<f64>,
    precision: &DMatrix<f64>,
    cfg: &ObjectiveConfig,
) -> (f64, DVector<f64>) {
    let (f, gf) = fid.eval(xt);
    let centre = mu * (1.0 - cfg.alpha) + x * cfg.alpha;
    let lx = precision * xt;
    let lc = precision * centre;
    let value = xt.dot(&lx) - 2.0 * xt.dot(&lc) + cfg.gamma * f;
    (value, (lx - lc) * 2.0 + gf * cfg.gamma)
}

pub fn regularized_loss(
    xt: &DVector<f64>,
    x: &DVector<f64>,
    fid: &Fidelity,
    mu: &DVector<f64>,
    precision: &DMatrix<f64>,
    cfg: &ObjectiveConfig,
) -> (f64, DVector<f64>) {
    let (value, grad) = wachter_loss(xt, x, fid, cfg);
    let d = xt - mu;
    let wd = DVector::from_fn(d.len(), |i, _| cfg.reg_weight * precision[(i, i)] * d[i]);
    (value + d.dot(&wd), grad + wd * 2.0)
}

/// An objective bound to one reference, ready for minimization.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub fidelity: Fidelity<'a>,
    pub reference: DVector<f64>,
    pub mu: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub cfg: ObjectiveConfig,
}

impl<'a> Objective<'a> {
    /// The prior is only consulted by the ours and regularized variants.
    pub fn new(fidelity: Fidelity<'a>, reference: DVector<f64>, prior: Option<&DataPrior>, cfg: ObjectiveConfig) -> Result<Self> {
        cfg.validate()?;
        let n = reference.len();
        if fidelity.input_dim() != n {
            return Err(dim_err("reference", fidelity.input_dim(), n));
        }
        let (mu, precision) = match (cfg.variant, prior) {
            (Variant::Wachter, _) => (DVector::zeros(n), DMatrix::zeros(n, n)),
            (_, Some(p)) => {
                if p.dim() != n {
                    return Err(dim_err("prior", n, p.dim()));
                }
                (p.mu.clone(), p.precision()?)
            }
            (_, None) => return Err(Error::InvalidParameter("this objective needs a data prior".into())),
        };
        Ok(Self { fidelity, reference, mu, precision, cfg })
    }

    pub fn eval(&self, xt: &DVector<f64>) -> (f64, DVector<f64>) {
        let (x, fid, cfg) = (&self.reference, &self.fidelity, &self.cfg);
        match cfg.variant {
            Variant::Wachter => wachter_loss(xt, x, fid, cfg),
            Variant::Ours => ours_loss(xt, x, fid, &self.mu, &self.precision, cfg),
            Variant::Regularized => regularized_loss(xt, x, fid, &self.mu, &self.precision, cfg),
        }
    }

    /// Adam from `init`.
    pub fn minimize(&self, init: &DVector<f64>, adam: &AdamConfig) -> Result<AdamOutcome> {
        adam_minimize(|z| self.eval(z), init, adam)
    }
}
