//! The five predictor families behind a single train/predict contract.

pub mod boost;
pub mod forest;
pub mod linear;
pub mod mlp;
pub mod params;
pub mod svm;
pub mod tree;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::preprocess::{FeatureMatrix, PreprocessorState};

pub use params::{
    Activation, Family, Hyperparams, Kernel, LrParams, NnParams, RfParams, SvmParams, XgbParams,
};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training diverged at {stage} {step}")]
    Diverged { stage: &'static str, step: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("schema mismatch: differing columns {0:?}")]
    SchemaMismatch(Vec<String>),
    #[error("artifact i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact format: {0}")]
    Format(String),
}

/// Training and validation folds for one fit.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub x_train: &'a FeatureMatrix,
    pub y_train: &'a [u8],
    pub x_val: &'a FeatureMatrix,
    pub y_val: &'a [u8],
}

impl TrainData<'_> {
    fn check(&self) -> Result<(), ModelError> {
        if self.x_train.n_rows != self.y_train.len() || self.x_val.n_rows != self.y_val.len() {
            return Err(ModelError::InvalidData(
                "row counts do not match label lengths".into(),
            ));
        }
        if self.x_train.n_rows == 0 {
            return Err(ModelError::InvalidData("empty training fold".into()));
        }
        if self.x_train.names != self.x_val.names {
            return Err(ModelError::InvalidData(
                "training and validation layouts differ".into(),
            ));
        }
        if self.y_train.iter().chain(self.y_val).any(|&y| y > 1) {
            return Err(ModelError::InvalidData("labels must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// Learned state of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Logistic(linear::LogisticModel),
    Mlp(mlp::Mlp),
    Forest(forest::Forest),
    Svm(svm::SvmModel),
    Booster(boost::Booster),
    /// Fallback for single-class training labels.
    Constant {
        score: f64,
    },
}

impl Predictor {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let p = match self {
            Predictor::Logistic(m) => m.predict_row(x),
            Predictor::Mlp(m) => m.predict_row(x),
            Predictor::Forest(m) => m.predict_row(x),
            Predictor::Svm(m) => m.predict_row(x),
            Predictor::Booster(m) => m.predict_row(x),
            Predictor::Constant { score } => *score,
        };
        p.clamp(0.0, 1.0)
    }

    /// Row-parallel batch prediction; each row is computed independently so
    /// results match single-row scoring bit for bit.
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows)
            .into_par_iter()
            .map(|i| self.predict_row(x.row(i)))
            .collect()
    }
}

/// Result of a single training run.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub predictor: Predictor,
    pub warnings: Vec<String>,
    /// Per-epoch validation loss (NN) or per-round training loss (XGB).
    pub history: Vec<f64>,
}

/// Fit one model of the family named by `hyperparams`.
pub fn fit(
    hyperparams: &Hyperparams,
    data: TrainData<'_>,
    seed: u64,
) -> Result<Fitted, ModelError> {
    hyperparams
        .validate()
        .map_err(ModelError::InvalidHyperparams)?;
    data.check()?;
    let positives = data.y_train.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == data.y_train.len() {
        let score = if positives == 0 { 0.0 } else { 1.0 };
        return Ok(Fitted {
            predictor: Predictor::Constant { score },
            warnings: vec!["single-class training labels: constant-score model".into()],
            history: Vec::new(),
        });
    }
    match hyperparams {
        Hyperparams::Lr(p) => {
            linear::LogisticModel::fit(p, data.x_train, data.y_train).map(|(m, warnings)| Fitted {
                predictor: Predictor::Logistic(m),
                warnings,
                history: Vec::new(),
            })
        }
        Hyperparams::Nn(p) => mlp::train(p, data, seed).map(|(m, history)| Fitted {
            predictor: Predictor::Mlp(m),
            warnings: Vec::new(),
            history,
        }),
        Hyperparams::Rf(p) => Ok(Fitted {
            predictor: Predictor::Forest(forest::Forest::fit(p, data.x_train, data.y_train, seed)),
            warnings: Vec::new(),
            history: Vec::new(),
        }),
        Hyperparams::Svm(p) => svm::SvmModel::fit(p, data).map(|(m, warnings)| Fitted {
            predictor: Predictor::Svm(m),
            warnings,
            history: Vec::new(),
        }),
        Hyperparams::Xgb(p) => {
            boost::Booster::fit(p, data.x_train, data.y_train, seed).map(|(m, history)| Fitted {
                predictor: Predictor::Booster(m),
                warnings: Vec::new(),
                history,
            })
        }
    }
}

/// A trained model bundled with everything needed to score a raw record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub family: Family,
    pub hyperparams: Hyperparams,
    pub predictor: Predictor,
    pub train_seed: u64,
    pub task: Task,
    pub preprocessor: PreprocessorState,
    pub validation_auc: f64,
    /// Score cutoff chosen on the validation ROC curve.
    pub operating_threshold: f64,
    pub warnings: Vec<String>,
}

impl ModelArtifact {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
        let expected = self.preprocessor.feature_names();
        if x.names != expected {
            return Err(ModelError::SchemaMismatch(x.layout_diff(&expected)));
        }
        Ok(self.predictor.predict(x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let artifact: ModelArtifact =
            serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if artifact.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported artifact format version {}",
                artifact.format_version
            )));
        }
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy computed from logits.
pub(crate) fn logit_loss(logits: &[f64], y: &[u8]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            // log(1 + e^z) - t z, evaluated stably
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - f64::from(t) * z
        })
        .sum();
    total / logits.len() as f64
}
