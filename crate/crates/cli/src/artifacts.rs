//! JSON artifacts for fitted models, priors and schemas.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! saved artifact reloads bit-for-bit.

use std::fs;
use std::path::Path;

use cfprior_core::{Activation, DataPrior, FeatureSchema, Layer, PriorSource, SplitClassifier};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MODEL_FILE: &str = "model.json";
pub const PRIOR_FILE: &str = "prior.json";
pub const SCHEMA_FILE: &str = "schema.json";

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixFile {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.transpose().iter().copied().collect() }
    }

    pub fn to_matrix(&self) -> CliResult<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(CliError::InvalidParam(format!(
                "matrix declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub weight: MatrixFile,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    /// Label values in class-index order.
    pub classes: Vec<String>,
    pub layers: Vec<LayerFile>,
    pub head_weight: MatrixFile,
    pub head_bias: Vec<f64>,
}

impl ModelFile {
    pub fn new(clf: &SplitClassifier, classes: Vec<String>) -> Self {
        Self {
            classes,
            layers: clf
                .layers
                .iter()
                .map(|l| LayerFile {
                    weight: MatrixFile::from_matrix(&l.weight),
                    bias: l.bias.iter().copied().collect(),
                    activation: l.activation,
                })
                .collect(),
            head_weight: MatrixFile::from_matrix(&clf.head_weight),
            head_bias: clf.head_bias.iter().copied().collect(),
        }
    }

    pub fn classifier(&self) -> CliResult<SplitClassifier> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    weight: l.weight.to_matrix()?,
                    bias: DVector::from_vec(l.bias.clone()),
                    activation: l.activation,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let clf = SplitClassifier::new(layers, self.head_weight.to_matrix()?, DVector::from_vec(self.head_bias.clone()))?;
        if clf.class_count() != self.classes.len() {
            return Err(CliError::InvalidParam(format!(
                "model has {} output classes but lists {} class labels",
                clf.class_count(),
                self.classes.len()
            )));
        }
        Ok(clf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFile {
    pub mu: Vec<f64>,
    pub sigma: MatrixFile,
    pub source: PriorSource,
}

impl PriorFile {
    pub fn new(prior: &DataPrior) -> Self {
        Self { mu: prior.mu.iter().copied().collect(), sigma: MatrixFile::from_matrix(&prior.sigma), source: prior.source }
    }

    pub fn prior(&self) -> CliResult<DataPrior> {
        Ok(DataPrior::new(DVector::from_vec(self.mu.clone()), self.sigma.to_matrix()?, self.source)?)
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Artifact { path: path.into(), message: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact { path: path.into(), message: e.to_string() })
}

/// Everything `fit` produces.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: SplitClassifier,
    pub classes: Vec<String>,
    pub prior: DataPrior,
    pub schema: FeatureSchema,
}

impl Fitted {
    pub fn save(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        save_json(&dir.join(MODEL_FILE), &ModelFile::new(&self.model, self.classes.clone()))?;
        save_json(&dir.join(PRIOR_FILE), &PriorFile::new(&self.prior))?;
        save_json(&dir.join(SCHEMA_FILE), &self.schema)
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let model_file: ModelFile = load_json(&dir.join(MODEL_FILE))?;
        let prior = load_json::<PriorFile>(&dir.join(PRIOR_FILE))?.prior()?;
        let schema: FeatureSchema = load_json(&dir.join(SCHEMA_FILE))?;
        let model = model_file.classifier()?;
        let schema = FeatureSchema { proportions: schema.proportions, ..FeatureSchema::new(schema.features)? };
        if model.input_dim() != schema.latent_dim() || prior.dim() != schema.latent_dim() {
            return Err(CliError::SchemaMismatch(format!(
                "schema has latent dimension {}, model expects {}, prior has {}",
                schema.latent_dim(),
                model.input_dim(),
                prior.dim()
            )));
        }
        Ok(Self { model, classes: model_file.classes, prior, schema })
    }
}
