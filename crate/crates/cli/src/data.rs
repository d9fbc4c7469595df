//! Tabular IO: header-bearing CSV datasets and TOML schema files.

use std::fs;
use std::path::Path;

use cfprior_core::{DataPrior, FeatureKind, FeatureSchema, FeatureSpec, LinearScm, RawValue, ScmNode};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Schema file: feature list plus an optional linear SCM used as the prior.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub scm: Vec<ScmNode>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config { path: path.into(), message: e.to_string() })
    }

    /// SCM prior reordered to the feature order; every feature must be a
    /// one-coordinate kind named by exactly one SCM node.
    pub fn scm_prior(&self) -> CliResult<Option<DataPrior>> {
        if self.scm.is_empty() {
            return Ok(None);
        }
        let scm = LinearScm::new(self.scm.clone())?;
        let names = scm.names();
        if names.len() != self.features.len() {
            return Err(CliError::SchemaMismatch(format!(
                "SCM has {} nodes but the schema lists {} features",
                names.len(),
                self.features.len()
            )));
        }
        let mut perm = Vec::with_capacity(names.len());
        for f in &self.features {
            if f.kind.latent_width() != 1 {
                return Err(CliError::SchemaMismatch(format!("SCM prior cannot cover multi-level feature `{}`", f.name)));
            }
            let i = names
                .iter()
                .position(|n| n == &f.name)
                .ok_or_else(|| CliError::SchemaMismatch(format!("feature `{}` has no SCM node", f.name)))?;
            perm.push(i);
        }
        let g = scm.to_gaussian()?;
        let mu = nalgebra::DVector::from_fn(perm.len(), |i, _| g.mu[perm[i]]);
        let sigma = nalgebra::DMatrix::from_fn(perm.len(), perm.len(), |i, j| g.sigma[(perm[i], perm[j])]);
        Ok(Some(DataPrior::new(mu, sigma, g.source)?))
    }
}

/// A CSV file split into its header and string cells.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let bad = |e: csv::Error| CliError::Csv { path: path.into(), message: e.to_string() };
        let headers = reader.headers().map_err(bad)?.iter().map(String::from).collect();
        let mut records = Vec::new();
        for r in reader.records() {
            records.push(r.map_err(bad)?.iter().map(String::from).collect());
        }
        Ok(Self { headers, records })
    }

    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::SchemaMismatch(format!("column `{name}` not found in dataset header")))
    }

    /// Rows parsed as raw feature values in schema order.
    pub fn raw_rows(&self, features: &[FeatureSpec]) -> CliResult<Vec<Vec<RawValue>>> {
        let cols = features.iter().map(|f| self.column(&f.name)).collect::<CliResult<Vec<_>>>()?;
        self.records
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                features
                    .iter()
                    .zip(&cols)
                    .map(|(f, &c)| parse_cell(f, &rec[c]).map_err(|m| CliError::SchemaMismatch(format!("row {i}: {m}"))))
                    .collect()
            })
            .collect()
    }

    /// Class indices of column `name`; classes are its distinct values,
    /// numerically sorted when all parse as numbers, otherwise lexically.
    pub fn labels(&self, name: &str) -> CliResult<(Vec<usize>, Vec<String>)> {
        let c = self.column(name)?;
        let values: Vec<&str> = self.records.iter().map(|r| r[c].as_str()).collect();
        let classes = class_levels(&values);
        let index = values.iter().map(|v| classes.iter().position(|k| k == v).expect("listed")).collect();
        Ok((index, classes))
    }
}

pub fn class_levels(values: &[&str]) -> Vec<String> {
    let mut classes: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    classes.sort();
    classes.dedup();
    let numeric: Option<Vec<f64>> = classes.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(f64, String)> = nums.into_iter().zip(classes).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        classes = paired.into_iter().map(|p| p.1).collect();
    }
    classes
}

pub fn parse_cell(f: &FeatureSpec, cell: &str) -> Result<RawValue, String> {
    match &f.kind {
        FeatureKind::Categorical { levels, .. } => levels
            .iter()
            .position(|l| l == cell)
            .map(RawValue::Category)
            .ok_or_else(|| format!("feature `{}`: unknown level `{cell}`", f.name)),
        FeatureKind::Binary => match cell {
            "1" | "true" => Ok(RawValue::Number(1.0)),
            "0" | "false" => Ok(RawValue::Number(0.0)),
            _ => Err(format!("feature `{}`: `{cell}` is not binary", f.name)),
        },
        _ => cell.parse::<f64>().map(RawValue::Number).map_err(|_| format!("feature `{}`: `{cell}` is not a number", f.name)),
    }
}

pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_cell(f: &FeatureSpec, v: RawValue) -> String {
    match (&f.kind, v) {
        (FeatureKind::Categorical { levels, .. }, RawValue::Category(k)) => levels[k].clone(),
        (FeatureKind::Binary, RawValue::Number(x)) => if x == 1.0 { "1" } else { "0" }.into(),
        (_, RawValue::Number(x)) => format_number(x),
        (_, RawValue::Category(k)) => k.to_string(),
    }
}

/// Schema with fitted proportions, dataset rows and labels.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub schema: FeatureSchema,
    pub raw: Vec<Vec<RawValue>>,
    pub latent: nalgebra::DMatrix<f64>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
    pub scm_prior: Option<DataPrior>,
}

pub fn load_dataset(data: &Path, schema: &Path, label: &str) -> CliResult<LoadedData> {
    let schema_file = SchemaFile::load(schema)?;
    let table = Table::read(data)?;
    let raw = table.raw_rows(&schema_file.features)?;
    let (labels, classes) = table.labels(label)?;
    if classes.len() < 2 {
        return Err(CliError::SchemaMismatch(format!("label column `{label}` has fewer than two classes")));
    }
    let schema = cfprior_core::fit_schema(&raw, schema_file.features.clone())?;
    let latent = schema.encode_rows(&raw)?;
    let scm_prior = schema_file.scm_prior()?;
    Ok(LoadedData { schema, raw, latent, labels, classes, scm_prior })
}
