//! Feature importance as the loss increase caused by masking one column.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::Predictor;
use crate::preprocess::{FeatureMatrix, FeatureRole, PreprocessorState};

pub const LOSS_CLIP: f64 = 1e-7;
pub const MASK_VALUE: f64 = 0.0;
pub const TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplainError {
    #[error("importance undefined: test labels contain a single class")]
    SingleClass,
    #[error("{0} rows but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("report has {0} entries but the layout has {1}")]
    LayoutMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    /// Share of the total clipped loss increase, in [0, 1].
    pub importance: f64,
    /// Raw loss increase `L_i - L_0` before clipping.
    pub loss_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// In layout order.
    pub features: Vec<FeatureImportance>,
    pub baseline_loss: f64,
    /// No feature raised the loss; importances were set uniform.
    pub degenerate: bool,
}

impl ImportanceReport {
    /// Entries by descending importance; equal importances keep layout order.
    pub fn ranked(&self) -> Vec<&FeatureImportance> {
        let mut v: Vec<&FeatureImportance> = self.features.iter().collect();
        v.sort_by(|a, b| b.importance.total_cmp(&a.importance));
        v
    }

    pub fn top(&self, k: usize) -> Vec<&FeatureImportance> {
        self.ranked().into_iter().take(k).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rank\tfeature\timportance_pct\n");
        for (i, f) in self.ranked().iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\n",
                i + 1,
                f.name,
                100.0 * f.importance
            ));
        }
        out
    }
}

/// Mean binary cross-entropy with scores clipped away from 0 and 1.
pub fn clipped_bce(scores: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = s.clamp(LOSS_CLIP, 1.0 - LOSS_CLIP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / scores.len() as f64
}

fn normalize(names: Vec<String>, deltas: Vec<f64>, baseline_loss: f64) -> ImportanceReport {
    let clipped: Vec<f64> = deltas.iter().map(|d| d.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let degenerate = total <= 0.0;
    let n = names.len() as f64;
    let features = names
        .into_iter()
        .zip(clipped.iter().zip(&deltas))
        .map(|(name, (&c, &d))| FeatureImportance {
            name,
            importance: if degenerate { 1.0 / n } else { c / total },
            loss_delta: d,
        })
        .collect();
    ImportanceReport {
        features,
        baseline_loss,
        degenerate,
    }
}

pub fn marginal_importance(
    predictor: &Predictor,
    x: &FeatureMatrix,
    y: &[u8],
) -> Result<ImportanceReport, ExplainError> {
    if x.n_rows != y.len() {
        return Err(ExplainError::LengthMismatch(x.n_rows, y.len()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(ExplainError::SingleClass);
    }
    let baseline = clipped_bce(&predictor.predict(x), y);
    let deltas: Vec<f64> = (0..x.n_cols())
        .into_par_iter()
        .map(|j| clipped_bce(&predictor.predict(&x.with_column_set(j, MASK_VALUE)), y) - baseline)
        .collect();
    Ok(normalize(x.names.clone(), deltas, baseline))
}

/// Sums the one-hot columns of each discrete source column into one entry.
/// Continuous columns and missing indicators stay separate.
pub fn grouped_importance(
    report: &ImportanceReport,
    state: &PreprocessorState,
) -> Result<ImportanceReport, ExplainError> {
    if report.features.len() != state.feature_layout.len() {
        return Err(ExplainError::LayoutMismatch(
            report.features.len(),
            state.feature_layout.len(),
        ));
    }
    let mut out: Vec<FeatureImportance> = Vec::new();
    let mut group_of: Vec<(String, usize)> = Vec::new();
    for (f, feat) in report.features.iter().zip(&state.feature_layout) {
        match &feat.role {
            FeatureRole::OneHot { source, .. } => {
                if let Some(&(_, k)) = group_of.iter().find(|(s, _)| s == source) {
                    out[k].importance += f.importance;
                    out[k].loss_delta += f.loss_delta;
                } else {
                    group_of.push((source.clone(), out.len()));
                    out.push(FeatureImportance {
                        name: source.clone(),
                        ..f.clone()
                    });
                }
            }
            FeatureRole::Continuous { .. } | FeatureRole::MissingIndicator { .. } => {
                out.push(f.clone())
            }
        }
    }
    Ok(ImportanceReport {
        features: out,
        baseline_loss: report.baseline_loss,
        degenerate: report.degenerate,
    })
}
