//! Transforms between raw feature rows and the Gaussian latent space.
//!
//! | kind            | latent                                   | decode                       |
//! |-----------------|------------------------------------------|------------------------------|
//! | continuous      | `x`                                      | `z`                          |
//! | log_continuous  | `ln x`                                   | `exp z`                      |
//! | pixel_logit(ε)  | `ln(|x − ε| / (1 − |x − ε|))`            | `ε + sigmoid(z)`             |
//! | categorical     | `+1` at the level, `−1` elsewhere        | argmax of `softmax(z / T)`   |
//! | binary          | `+1` / `−1`                              | `z > 0`                      |
//!
//! Pixels round-trip on `(ε, 1]`; values below `ε` encode to the same latent
//! as their reflection `2ε − x`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actionability::{FeatureClass, FeaturePolicy};
use crate::error::{dim_err, Error, Result};
use crate::models::softmax;
use crate::prior::DataPrior;

fn default_temperature() -> f64 {
    0.01
}

fn default_eps() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    LogContinuous,
    PixelLogit {
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Categorical {
        levels: Vec<String>,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    Binary,
}

impl FeatureKind {
    pub fn latent_width(&self) -> usize {
        match self {
            FeatureKind::Categorical { levels, .. } => levels.len(),
            _ => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, FeatureKind::Categorical { .. } | FeatureKind::Binary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    #[serde(default)]
    pub immutable: bool,
    /// Ancestor feature names; non-empty marks the feature non-actionable.
    #[serde(default)]
    pub nonactionable: Vec<String>,
}

impl FeatureSpec {
    pub fn new(name: &str, kind: FeatureKind) -> Self {
        Self { name: name.into(), kind, immutable: false, nonactionable: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawValue {
    Number(f64),
    /// Level index for categorical features.
    Category(usize),
}

impl RawValue {
    pub fn number(self) -> Option<f64> {
        match self {
            RawValue::Number(v) => Some(v),
            RawValue::Category(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    /// Per discrete feature, the smoothed level proportions seen at fit time
    /// (binary: `[P(0), P(1)]`); empty for continuous kinds or before fitting.
    #[serde(default)]
    pub proportions: Vec<Vec<f64>>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Level proportions with add-one smoothing when any level is unseen.
fn smoothed(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let add = usize::from(counts.contains(&0));
    let denom = (total + add * counts.len()) as f64;
    counts.iter().map(|&c| (c + add) as f64 / denom).collect()
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        for (i, f) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidParameter(format!("duplicate feature name `{}`", f.name)));
            }
            match &f.kind {
                FeatureKind::PixelLogit { eps } if !(*eps > 0.0 && *eps < 0.5) => {
                    return Err(Error::InvalidParameter(format!("feature `{}`: eps must lie in (0, 0.5)", f.name)));
                }
                FeatureKind::Categorical { levels, temperature } => {
                    if !(*temperature > 0.0) {
                        return Err(Error::InvalidParameter(format!("feature `{}`: temperature must be > 0", f.name)));
                    }
                    if levels.len() < 2 {
                        return Err(Error::InvalidParameter(format!("feature `{}` needs at least 2 levels", f.name)));
                    }
                }
                _ => {}
            }
            if f.immutable && !f.nonactionable.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "feature `{}` cannot be both immutable and non-actionable",
                    f.name
                )));
            }
            for a in &f.nonactionable {
                if !features.iter().any(|g| &g.name == a) {
                    return Err(Error::InvalidParameter(format!("feature `{}` lists unknown ancestor `{a}`", f.name)));
                }
            }
        }
        Ok(Self { features, proportions: Vec::new() })
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn latent_dim(&self) -> usize {
        self.features.iter().map(|f| f.kind.latent_width()).sum()
    }

    /// Latent coordinates occupied by each feature.
    pub fn latent_ranges(&self) -> Vec<Range<usize>> {
        let mut at = 0;
        self.features
            .iter()
            .map(|f| {
                let r = at..at + f.kind.latent_width();
                at = r.end;
                r
            })
            .collect()
    }

    /// Immutability and non-actionability expanded to latent coordinates.
    pub fn latent_policy(&self) -> Result<FeaturePolicy> {
        let ranges = self.latent_ranges();
        let mut classes = Vec::with_capacity(self.latent_dim());
        for (f, range) in self.features.iter().zip(&ranges) {
            let class = if f.immutable {
                FeatureClass::Immutable
            } else if f.nonactionable.is_empty() {
                FeatureClass::Mutable
            } else {
                let mut ancestors = Vec::new();
                for a in &f.nonactionable {
                    let j = self.features.iter().position(|g| &g.name == a).expect("validated");
                    ancestors.extend(ranges[j].clone());
                }
                FeatureClass::Nonactionable { ancestors }
            };
            for _ in range.clone() {
                classes.push(class.clone());
            }
        }
        FeaturePolicy::new(classes)
    }

    fn check_row(&self, row: &[RawValue]) -> Result<()> {
        if row.len() != self.features.len() {
            return Err(dim_err("raw row", self.features.len(), row.len()));
        }
        Ok(())
    }

    pub fn encode_row(&self, row: &[RawValue]) -> Result<DVector<f64>> {
        self.check_row(row)?;
        let mut out = Vec::with_capacity(self.latent_dim());
        for (f, &v) in self.features.iter().zip(row) {
            let bad = |what: &str| Error::InvalidData(format!("feature `{}`: {what}", f.name));
            match (&f.kind, v) {
                (FeatureKind::Continuous, RawValue::Number(x)) if x.is_finite() => out.push(x),
                (FeatureKind::LogContinuous, RawValue::Number(x)) => {
                    if !(x > 0.0) || !x.is_finite() {
                        return Err(bad(&format!("log feature needs a positive value, got {x}")));
                    }
                    out.push(x.ln());
                }
                (FeatureKind::PixelLogit { eps }, RawValue::Number(x)) => {
                    if !(0.0..=1.0).contains(&x) {
                        return Err(bad(&format!("pixel {x} outside [0, 1]")));
                    }
                    let d = (x - eps).abs();
                    let z = (d / (1.0 - d)).ln();
                    if !z.is_finite() {
                        return Err(bad(&format!("pixel {x} has an infinite logit")));
                    }
                    out.push(z);
                }
                (FeatureKind::Categorical { levels, .. }, RawValue::Category(k)) if k < levels.len() => {
                    out.extend((0..levels.len()).map(|j| if j == k { 1.0 } else { -1.0 }));
                }
                (FeatureKind::Binary, RawValue::Number(x)) if x == 0.0 || x == 1.0 => {
                    out.push(if x == 1.0 { 1.0 } else { -1.0 });
                }
                (_, v) => return Err(bad(&format!("value {v:?} is outside the declared domain"))),
            }
        }
        Ok(DVector::from_vec(out))
    }

    pub fn encode_rows(&self, rows: &[Vec<RawValue>]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows.len(), self.latent_dim());
        for (i, row) in rows.iter().enumerate() {
            let z = self.encode_row(row).map_err(|e| Error::InvalidData(format!("row {i}: {e}")))?;
            out.row_mut(i).copy_from(&z.transpose());
        }
        Ok(out)
    }

    pub fn decode_row(&self, latent: &DVector<f64>) -> Result<Vec<RawValue>> {
        if latent.len() != self.latent_dim() {
            return Err(dim_err("latent vector", self.latent_dim(), latent.len()));
        }
        let mut out = Vec::with_capacity(self.features.len());
        for (f, r) in self.features.iter().zip(self.latent_ranges()) {
            let z = latent[r.start];
            out.push(match &f.kind {
                FeatureKind::Continuous => RawValue::Number(z),
                FeatureKind::LogContinuous => RawValue::Number(z.exp()),
                FeatureKind::PixelLogit { eps } => RawValue::Number(eps + sigmoid(z)),
                FeatureKind::Categorical { .. } => {
                    let w = self.soft_weights(latent, &r, &f.kind);
                    RawValue::Category(crate::models::argmax(&w))
                }
                FeatureKind::Binary => RawValue::Number(if z > 0.0 { 1.0 } else { 0.0 }),
            });
        }
        Ok(out)
    }

    fn soft_weights(&self, latent: &DVector<f64>, r: &Range<usize>, kind: &FeatureKind) -> DVector<f64> {
        let FeatureKind::Categorical { temperature, .. } = kind else { unreachable!() };
        softmax(&DVector::from_fn(r.len(), |j, _| latent[r.start + j] / temperature))
    }

    /// Softmax weights of categorical feature `feature` at its temperature.
    pub fn categorical_weights(&self, feature: usize, latent: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.features.get(feature).ok_or_else(|| Error::InvalidParameter(format!("no feature {feature}")))?;
        if !matches!(f.kind, FeatureKind::Categorical { .. }) {
            return Err(Error::InvalidParameter(format!("feature `{}` is not categorical", f.name)));
        }
        let r = self.latent_ranges()[feature].clone();
        Ok(self.soft_weights(latent, &r, &f.kind))
    }

    /// Replaces discrete latents by the encoding of their decoded value.
    pub fn snap(&self, latent: &DVector<f64>) -> Result<DVector<f64>> {
        let decoded = self.decode_row(latent)?;
        let recoded = self.encode_row(&decoded)?;
        let mut out = latent.clone();
        for (f, r) in self.features.iter().zip(self.latent_ranges()) {
            if f.kind.is_discrete() {
                out.rows_mut(r.start, r.len()).copy_from(&recoded.rows(r.start, r.len()));
            }
        }
        Ok(out)
    }

    /// Latent prior means for discrete coordinates: logits of the level
    /// proportions (binary: of `P(1)`).
    pub fn discrete_latent_means(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if self.proportions.len() != self.features.len() {
            return out;
        }
        for ((f, r), props) in self.features.iter().zip(self.latent_ranges()).zip(&self.proportions) {
            match f.kind {
                FeatureKind::Binary => out.push((r.start, logit(props[1]))),
                FeatureKind::Categorical { .. } => {
                    out.extend(props.iter().enumerate().map(|(j, &p)| (r.start + j, logit(p))));
                }
                _ => {}
            }
        }
        out
    }

    /// Discrete coordinates of `prior` replaced by independent
    /// `N(logit proportion, 1)` components.
    pub fn adjust_prior(&self, prior: &DataPrior) -> Result<DataPrior> {
        if prior.dim() != self.latent_dim() {
            return Err(dim_err("prior", self.latent_dim(), prior.dim()));
        }
        let mut mu = prior.mu.clone();
        let mut sigma = prior.sigma.clone();
        for (i, m) in self.discrete_latent_means() {
            mu[i] = m;
            sigma.row_mut(i).fill(0.0);
            sigma.column_mut(i).fill(0.0);
            sigma[(i, i)] = 1.0;
        }
        DataPrior::new(mu, sigma, prior.source)
    }
}

/// Validates raw rows against `specs` and records discrete level proportions.
pub fn fit_schema(rows: &[Vec<RawValue>], specs: Vec<FeatureSpec>) -> Result<FeatureSchema> {
    if rows.is_empty() {
        return Err(Error::InvalidData("cannot fit a schema on an empty table".into()));
    }
    let mut schema = FeatureSchema::new(specs)?;
    for (i, row) in rows.iter().enumerate() {
        schema.encode_row(row).map_err(|e| Error::InvalidData(format!("row {i}: {e}")))?;
    }
    let mut proportions = Vec::with_capacity(schema.features.len());
    for (j, f) in schema.features.iter().enumerate() {
        let counts = match &f.kind {
            FeatureKind::Binary => {
                let ones = rows.iter().filter(|r| r[j] == RawValue::Number(1.0)).count();
                alloc::vec![rows.len() - ones, ones]
            }
            FeatureKind::Categorical { levels, .. } => {
                let mut c = alloc::vec![0usize; levels.len()];
                for r in rows {
                    if let RawValue::Category(k) = r[j] {
                        c[k] += 1;
                    }
                }
                c
            }
            _ => {
                proportions.push(Vec::new());
                continue;
            }
        };
        proportions.push(smoothed(&counts));
    }
    schema.proportions = proportions;
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::dvector;

    fn cat(levels: usize) -> FeatureKind {
        FeatureKind::Categorical { levels: (0..levels).map(|i| format!("l{i}")).collect(), temperature: 0.01 }
    }

    #[test]
    fn pixel_spot_values() {
        let s = FeatureSchema::new(vec![FeatureSpec::new("p", FeatureKind::PixelLogit { eps: 0.01 })]).unwrap();
        assert!(s.encode_row(&[RawValue::Number(0.51)]).unwrap()[0].abs() < 1e-15);
        let z = s.encode_row(&[RawValue::Number(0.5)]).unwrap()[0];
        assert!((z - (0.49_f64 / 0.51).ln()).abs() < 1e-15);
        assert!((z + 0.0400).abs() < 5e-5);
        assert!(s.encode_row(&[RawValue::Number(1.5)]).is_err());
        assert!(s.encode_row(&[RawValue::Number(0.01)]).is_err());
    }

    #[test]
    fn binary_proportion_logit() {
        let rows: Vec<Vec<RawValue>> = (0..10).map(|i| vec![RawValue::Number(if i < 3 { 1.0 } else { 0.0 })]).collect();
        let s = fit_schema(&rows, vec![FeatureSpec::new("b", FeatureKind::Binary)]).unwrap();
        let means = s.discrete_latent_means();
        assert!((means[0].1 - (0.3_f64 / 0.7).ln()).abs() < 1e-15);
        assert!((means[0].1 + 0.8473).abs() < 1e-4);
    }

    #[test]
    fn equiprobable_levels_have_zero_means() {
        let rows = vec![vec![RawValue::Category(0)], vec![RawValue::Category(1)]];
        let s = fit_schema(&rows, vec![FeatureSpec::new("c", cat(2))]).unwrap();
        assert!(s.discrete_latent_means().iter().all(|(_, m)| *m == 0.0));
    }

    #[test]
    fn unseen_level_is_smoothed() {
        let rows = vec![vec![RawValue::Category(0)], vec![RawValue::Category(0)]];
        let s = fit_schema(&rows, vec![FeatureSpec::new("c", cat(2))]).unwrap();
        assert_eq!(s.proportions[0], vec![0.75, 0.25]);
    }

    #[test]
    fn log_feature_constant_column() {
        let rows = vec![vec![RawValue::Number(3.0)]; 4];
        let s = fit_schema(&rows, vec![FeatureSpec::new("v", FeatureKind::LogContinuous)]).unwrap();
        let enc = s.encode_rows(&rows).unwrap();
        assert!(enc.iter().all(|&z| z == 3.0_f64.ln()));
        let bad = vec![vec![RawValue::Number(3.0)], vec![RawValue::Number(0.0)]];
        let err = fit_schema(&bad, vec![FeatureSpec::new("v", FeatureKind::LogContinuous)]).unwrap_err();
        assert!(format!("{err}").contains("row 1"));
    }

    #[test]
    fn categorical_decode_weight() {
        let s = FeatureSchema::new(vec![FeatureSpec::new("c", cat(3))]).unwrap();
        let z = dvector![2.0, 0.0, -1.0];
        assert_eq!(s.decode_row(&z).unwrap(), vec![RawValue::Category(0)]);
        assert!(s.categorical_weights(0, &z).unwrap()[0] > 0.9999);
    }

    #[test]
    fn snap_discretizes() {
        let s = FeatureSchema::new(vec![
            FeatureSpec::new("x", FeatureKind::Continuous),
            FeatureSpec::new("c", cat(2)),
            FeatureSpec::new("b", FeatureKind::Binary),
        ])
        .unwrap();
        let snapped = s.snap(&dvector![0.3, 0.2, 0.7, -0.1]).unwrap();
        assert_eq!(snapped, dvector![0.3, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn latent_policy_expands_categories() {
        let mut age = FeatureSpec::new("age", FeatureKind::Continuous);
        age.immutable = true;
        let mut score = FeatureSpec::new("score", FeatureKind::Continuous);
        score.nonactionable = vec!["job".into()];
        let s = FeatureSchema::new(vec![age, FeatureSpec::new("job", cat(3)), score]).unwrap();
        let p = s.latent_policy().unwrap();
        assert_eq!(p.immutable_mask(), vec![true, false, false, false, false]);
        assert_eq!(p.classes()[4], FeatureClass::Nonactionable { ancestors: vec![1, 2, 3] });
    }
}
