//! Log-density of a prior or counterfactual posterior on a 2-D grid.
//!
//! ```toml
//! kind = "pgm1"            # prior | pgm1 | pgm2 | pgm3
//! mu = [0.0, 0.0]
//! sigma = [[4.04, -7.80], [-7.80, 17.00]]
//! x = [0.0, 0.0]
//! a = [[2.0, -3.0]]
//! b = [5.0]
//! l = [[1.0]]
//! y_prime = [10.0]
//! gamma = 1.0              # similarity precision γ·I for pgm1 / pgm3
//! alpha = 0.5              # pgm2
//! bounds = [[-10.0, 10.0], [-10.0, 10.0]]
//! resolution = 201
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cfprior_core::posterior::{posterior_pgm1, posterior_pgm2, posterior_pgm3};
use cfprior_core::{DataPrior, Gaussian, JointCfPrior, LinearLikelihood, PriorSource};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::data::format_number;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityKind {
    Prior,
    Pgm1,
    Pgm2,
    Pgm3,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub kind: DensityKind,
    pub mu: Option<Vec<f64>>,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub x: Option<Vec<f64>>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub l: Option<Vec<Vec<f64>>>,
    pub y_prime: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub alpha: f64,
    pub bounds: [[f64; 2]; 2],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn one() -> f64 {
    1.0
}

fn default_resolution() -> usize {
    101
}

fn need<'a, T>(v: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::InvalidParam(format!("density spec needs `{name}`")))
}

fn matrix(rows: &[Vec<f64>], name: &str) -> CliResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::InvalidParam(format!("`{name}` must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl DensitySpec {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config { path: path.into(), message: e.to_string() })
    }

    fn prior(&self) -> CliResult<DataPrior> {
        let mu = DVector::from_vec(need(&self.mu, "mu")?.clone());
        let sigma = matrix(need(&self.sigma, "sigma")?, "sigma")?;
        Ok(DataPrior::new(mu, sigma, PriorSource::UserSupplied)?)
    }

    fn likelihood(&self) -> CliResult<LinearLikelihood> {
        let a = matrix(need(&self.a, "a")?, "a")?;
        let b = DVector::from_vec(need(&self.b, "b")?.clone());
        let l = matrix(need(&self.l, "l")?, "l")?;
        Ok(LinearLikelihood::new(a, b, l)?)
    }

    /// The Gaussian whose density is tabulated.
    pub fn distribution(&self) -> CliResult<Gaussian> {
        if self.kind == DensityKind::Prior {
            return Ok(self.prior()?.gaussian()?);
        }
        let lik = self.likelihood()?;
        let x = DVector::from_vec(need(&self.x, "x")?.clone());
        let y = DVector::from_vec(need(&self.y_prime, "y_prime")?.clone());
        let n = x.len();
        let w_prec = DMatrix::identity(n, n) * self.gamma;
        Ok(match self.kind {
            DensityKind::Pgm1 => posterior_pgm1(&lik, &x, &y, &w_prec)?,
            DensityKind::Pgm2 => {
                let joint = JointCfPrior::build(self.prior()?, self.alpha, &vec![false; n])?;
                posterior_pgm2(&lik, &joint, &x, &y)?
            }
            DensityKind::Pgm3 => posterior_pgm3(&lik, &self.prior()?, &x, &y, &w_prec)?,
            DensityKind::Prior => unreachable!(),
        })
    }
}

/// `(x, y, log density)` at `res × res` points spanning the bounds
/// inclusively, x-major.
pub fn density_grid(g: &Gaussian, bounds: [[f64; 2]; 2], res: usize) -> CliResult<Vec<(f64, f64, f64)>> {
    if g.dim() != 2 {
        return Err(CliError::InvalidParam(format!("density grids need a 2-D distribution, got {}-D", g.dim())));
    }
    if res < 2 {
        return Err(CliError::InvalidParam("grid resolution must be at least 2".into()));
    }
    if bounds.iter().any(|b| !(b[0] < b[1]) || !b[0].is_finite() || !b[1].is_finite()) {
        return Err(CliError::InvalidParam("grid bounds must be finite with lower < upper".into()));
    }
    let axis = |k: usize, i: usize| bounds[k][0] + (bounds[k][1] - bounds[k][0]) * i as f64 / (res - 1) as f64;
    let mut out = Vec::with_capacity(res * res);
    for i in 0..res {
        for j in 0..res {
            let (px, py) = (axis(0, i), axis(1, j));
            out.push((px, py, g.log_pdf(&DVector::from_vec(vec![px, py]))?));
        }
    }
    Ok(out)
}

pub fn grid_csv(points: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("x,y,log_density,density\n");
    for &(x, y, lp) in points {
        let _ = writeln!(s, "{},{},{},{}", format_number(x), format_number(y), format_number(lp), format_number(lp.exp()));
    }
    s
}
