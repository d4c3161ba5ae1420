//! Single-record scoring with masked-prediction attributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{CohortTable, ColumnKind, ColumnValues, Labels, RawColumn};
use crate::explain::MASK_VALUE;
use crate::models::ModelArtifact;
use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{key}` expects a {expected} value")]
    WrongKind { key: String, expected: &'static str },
    #[error("preprocessing failed: {0}")]
    Preprocess(String),
}

impl RecordError {
    pub fn key(&self) -> Option<&str> {
        match self {
            RecordError::UnknownFeature(k) | RecordError::WrongKind { key: k, .. } => Some(k),
            RecordError::Preprocess(_) => None,
        }
    }
}

/// One raw field value; `Null` and absent keys both mean missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Number(f64),
    Text(String),
    Null,
}

impl From<&serde_json::Value> for RawValue {
    fn from(v: &serde_json::Value) -> Self {
        match v {
            serde_json::Value::Number(n) => n.as_f64().map_or(RawValue::Null, RawValue::Number),
            serde_json::Value::String(s) => RawValue::Text(s.clone()),
            serde_json::Value::Bool(b) => RawValue::Text(b.to_string()),
            _ => RawValue::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub feature: String,
    /// `score - score_with_feature_masked`, scaled so absolute values sum to 1.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub probability: f64,
    /// One entry per output feature, in layout order.
    pub attributions: Vec<Attribution>,
    /// Every field was missing, or no feature moved the score.
    pub degenerate: bool,
}

/// Builds the one-row feature matrix for a raw record.
pub fn record_matrix(
    artifact: &ModelArtifact,
    record: &BTreeMap<String, RawValue>,
) -> Result<FeatureMatrix, RecordError> {
    let state = &artifact.preprocessor;
    for key in record.keys() {
        if !state.source_columns.iter().any(|c| &c.name == key) {
            return Err(RecordError::UnknownFeature(key.clone()));
        }
    }
    let mut columns = Vec::with_capacity(state.source_columns.len());
    for c in &state.source_columns {
        let v = record.get(&c.name).unwrap_or(&RawValue::Null);
        let values = match (c.kind, v) {
            (ColumnKind::Numeric, RawValue::Number(x)) if x.is_finite() => {
                ColumnValues::Numeric(vec![Some(*x)])
            }
            (ColumnKind::Numeric, RawValue::Null) => ColumnValues::Numeric(vec![None]),
            (ColumnKind::Numeric, _) => {
                return Err(RecordError::WrongKind {
                    key: c.name.clone(),
                    expected: "numeric",
                })
            }
            (ColumnKind::Categorical, RawValue::Text(s)) if !s.is_empty() => {
                ColumnValues::Categorical(vec![Some(s.clone())])
            }
            (ColumnKind::Categorical, RawValue::Null) => ColumnValues::Categorical(vec![None]),
            (ColumnKind::Categorical, _) => {
                return Err(RecordError::WrongKind {
                    key: c.name.clone(),
                    expected: "text",
                })
            }
        };
        columns.push(RawColumn {
            name: c.name.clone(),
            values,
        });
    }
    let table = CohortTable {
        ids: None,
        columns,
        labels: Labels {
            sars_cov_2: vec![0],
            admission: vec![0],
            icu: vec![0],
        },
        age_quantile: vec![0],
    };
    state
        .apply(&table)
        .map_err(|e| RecordError::Preprocess(e.to_string()))
}

pub fn score_record(
    artifact: &ModelArtifact,
    record: &BTreeMap<String, RawValue>,
) -> Result<RecordScore, RecordError> {
    let x = record_matrix(artifact, record)?;
    let row = x.row(0);
    let probability = artifact.predictor.predict_row(row);
    let mut masked = row.to_vec();
    let raw: Vec<f64> = (0..row.len())
        .map(|j| {
            masked[j] = MASK_VALUE;
            let d = probability - artifact.predictor.predict_row(&masked);
            masked[j] = row[j];
            d
        })
        .collect();
    let total: f64 = raw.iter().map(|d| d.abs()).sum();
    let all_missing = record.values().all(|v| *v == RawValue::Null);
    let attributions = x
        .names
        .iter()
        .zip(&raw)
        .map(|(name, &d)| Attribution {
            feature: name.clone(),
            delta: if total > 0.0 { d / total } else { 0.0 },
        })
        .collect();
    Ok(RecordScore {
        probability,
        attributions,
        degenerate: all_missing || total == 0.0,
    })
}

/// The `k` largest attributions by magnitude, rescaled so their absolute
/// values sum to 1. Ties keep layout order.
pub fn top_attributions(all: &[Attribution], k: usize) -> Vec<Attribution> {
    let mut v: Vec<&Attribution> = all.iter().filter(|a| a.delta != 0.0).collect();
    v.sort_by(|a, b| b.delta.abs().total_cmp(&a.delta.abs()));
    v.truncate(k);
    let total: f64 = v.iter().map(|a| a.delta.abs()).sum();
    v.into_iter()
        .map(|a| Attribution {
            feature: a.feature.clone(),
            delta: a.delta / total,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_attributions_renormalize() {
        let all: Vec<Attribution> = [0.5, -0.2, 0.0, 0.3]
            .iter()
            .enumerate()
            .map(|(i, &d)| Attribution {
                feature: format!("f{i}"),
                delta: d,
            })
            .collect();
        let top = top_attributions(&all, 2);
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].feature, "f0");
        assert!((top.iter().map(|a| a.delta.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(top_attributions(&all[2..3], 10).is_empty());
    }

    #[test]
    fn json_values_map_to_raw() {
        assert_eq!(
            RawValue::from(&serde_json::json!(1.5)),
            RawValue::Number(1.5)
        );
        assert_eq!(RawValue::from(&serde_json::json!(null)), RawValue::Null);
        assert_eq!(
            RawValue::from(&serde_json::json!("x")),
            RawValue::Text("x".into())
        );
    }
}
