//! Training-fold preprocessing.
//!
//! Fitting happens on the training fold only; the fitted state is then applied
//! unchanged to every fold. Output layout is one-hot groups, then standardized
//! continuous columns, then one missingness indicator per continuous column.
//!
//! Imputation runs in standardized space as a deterministic chain of ridge
//! regressions: missing entries start at the column mean (zero) and are
//! refreshed column by column, most-observed column first.

use std::collections::{BTreeSet, HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CohortTable, ColumnKind, ColumnValues};

pub const STATE_SCHEMA_VERSION: u32 = 1;
/// Columns missing for more than this fraction of training patients are dropped.
pub const DROP_MISSING_FRACTION: f64 = 0.998;
/// Numeric columns with fewer distinct training values than this are discrete.
pub const DISCRETE_MAX_UNIQUE: usize = 6;
pub const DEFAULT_CHAINED_ITERATIONS: usize = 10;
pub const RIDGE_LAMBDA: f64 = 1e-3;
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("training fold is empty")]
    EmptyTraining,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceColumn {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteEncoding {
    pub column: String,
    /// Observed training categories in sorted order; the missing category
    /// is implicit and always last.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub column: String,
    pub mean: f64,
    pub std: f64,
    /// Std below the floor: the column standardizes to all zeros.
    pub inert: bool,
}

/// Linear model predicting one standardized continuous column from the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeModel {
    pub intercept: f64,
    /// One coefficient per continuous column; the target's own entry is zero.
    pub coefs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum FeatureRole {
    OneHot {
        source: String,
        category: Option<String>,
    },
    Continuous {
        source: String,
    },
    MissingIndicator {
        source: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFeature {
    pub name: String,
    #[serde(flatten)]
    pub role: FeatureRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessorState {
    pub schema_version: u32,
    pub source_columns: Vec<SourceColumn>,
    pub dropped: Vec<String>,
    pub discrete: Vec<DiscreteEncoding>,
    pub continuous: Vec<ContinuousStats>,
    pub impute_models: Vec<ImputeModel>,
    pub impute_order: Vec<usize>,
    pub n_chained_iterations: usize,
    pub ridge_lambda: f64,
    pub feature_layout: Vec<OutputFeature>,
}

/// Dense, fully imputed design matrix (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// Row-major `n_rows × n_continuous`; 1 where the value was imputed.
    pub missing_mask: Vec<u8>,
}

impl FeatureMatrix {
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Self {
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        FeatureMatrix {
            n_rows: rows.len(),
            names,
            values,
            missing_mask: Vec::new(),
        }
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_cols().max(1)).take(self.n_rows)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let d = self.n_cols();
        let k = self
            .missing_mask
            .len()
            .checked_div(self.n_rows)
            .unwrap_or(0);
        FeatureMatrix {
            n_rows: rows.len(),
            names: self.names.clone(),
            values: rows
                .iter()
                .flat_map(|&r| self.values[r * d..(r + 1) * d].iter().copied())
                .collect(),
            missing_mask: rows
                .iter()
                .flat_map(|&r| self.missing_mask[r * k..(r + 1) * k].iter().copied())
                .collect(),
        }
    }

    /// Copy with column `j` set to `value` in every row.
    pub fn with_column_set(&self, j: usize, value: f64) -> FeatureMatrix {
        let mut out = self.clone();
        let d = self.n_cols();
        for i in 0..self.n_rows {
            out.values[i * d + j] = value;
        }
        out
    }

    /// Names that differ between this matrix and an expected layout.
    pub fn layout_diff(&self, expected: &[String]) -> Vec<String> {
        let have: HashSet<&String> = self.names.iter().collect();
        let want: HashSet<&String> = expected.iter().collect();
        let mut diff: Vec<String> = have
            .symmetric_difference(&want)
            .map(|s| s.to_string())
            .collect();
        if diff.is_empty() && self.names != expected {
            diff.push("<column order differs>".into());
        }
        diff.sort();
        diff
    }
}

fn category_key(v: f64) -> String {
    format!("{v}")
}

fn missing_fraction(values: &ColumnValues) -> f64 {
    let n = values.len();
    let missing = (0..n).filter(|&r| values.is_missing(r)).count();
    missing as f64 / n as f64
}

/// Columns whose training-fold missing fraction exceeds 99.8%.
pub fn fit_drop_rule(train: &CohortTable) -> Result<BTreeSet<String>, PreprocessError> {
    if train.n_rows() == 0 {
        return Err(PreprocessError::EmptyTraining);
    }
    Ok(train
        .columns
        .iter()
        .filter(|c| missing_fraction(&c.values) > DROP_MISSING_FRACTION)
        .map(|c| c.name.clone())
        .collect())
}

/// Split kept columns into (discrete, continuous) by training cardinality.
/// Text columns are always discrete.
pub fn classify_feature_kinds(
    train: &CohortTable,
    dropped: &BTreeSet<String>,
) -> (Vec<String>, Vec<String>) {
    let mut discrete = Vec::new();
    let mut continuous = Vec::new();
    for col in train.columns.iter().filter(|c| !dropped.contains(&c.name)) {
        let is_discrete = match &col.values {
            ColumnValues::Categorical(_) => true,
            ColumnValues::Numeric(v) => {
                let distinct: BTreeSet<u64> =
                    v.iter().flatten().map(|x| (x + 0.0).to_bits()).collect();
                distinct.len() < DISCRETE_MAX_UNIQUE
            }
        };
        if is_discrete {
            discrete.push(col.name.clone());
        } else {
            continuous.push(col.name.clone());
        }
    }
    (discrete, continuous)
}

fn observed_categories(values: &ColumnValues) -> Vec<String> {
    match values {
        ColumnValues::Numeric(v) => {
            let mut nums: Vec<f64> = v.iter().flatten().map(|x| x + 0.0).collect();
            nums.sort_by(f64::total_cmp);
            nums.dedup();
            nums.into_iter().map(category_key).collect()
        }
        ColumnValues::Categorical(v) => {
            let set: BTreeSet<&String> = v.iter().flatten().collect();
            set.into_iter().cloned().collect()
        }
    }
}

fn numeric_values<'a>(
    cohort: &'a CohortTable,
    name: &str,
) -> Result<&'a [Option<f64>], PreprocessError> {
    match cohort.column(name).map(|c| &c.values) {
        Some(ColumnValues::Numeric(v)) => Ok(v),
        Some(ColumnValues::Categorical(_)) => Err(PreprocessError::SchemaMismatch(format!(
            "column `{name}` expected numeric, found text"
        ))),
        None => Err(PreprocessError::SchemaMismatch(format!(
            "column `{name}` missing from fold"
        ))),
    }
}

/// Ridge regression with an unpenalized intercept, solved on centered data.
fn ridge(
    design: &[Vec<f64>],
    target: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>), PreprocessError> {
    let n = target.len();
    let p = design.first().map_or(0, Vec::len);
    if n == 0 {
        return Ok((0.0, vec![0.0; p]));
    }
    let mut x_mean = vec![0.0; p];
    for row in design {
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= n as f64);
    let y_mean = target.iter().sum::<f64>() / n as f64;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut centered = vec![0.0; p];
    for (row, &y) in design.iter().zip(target) {
        for k in 0..p {
            centered[k] = row[k] - x_mean[k];
        }
        let yc = y - y_mean;
        for a in 0..p {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            rhs[a] += ca * yc;
            for b in a..p {
                gram[(a, b)] += ca * centered[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
        gram[(a, a)] += lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| PreprocessError::Internal("ridge system is not positive definite".into()))?;
    let beta = chol.solve(&rhs);
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok((intercept, beta.iter().copied().collect()))
}

impl PreprocessorState {
    /// Fit the full preprocessing chain on the training fold.
    pub fn fit(train: &CohortTable, n_chained_iterations: usize) -> Result<Self, PreprocessError> {
        if n_chained_iterations == 0 {
            return Err(PreprocessError::Internal(
                "n_chained_iterations must be at least 1".into(),
            ));
        }
        let dropped = fit_drop_rule(train)?;
        let (discrete_names, continuous_names) = classify_feature_kinds(train, &dropped);

        let discrete: Vec<DiscreteEncoding> = discrete_names
            .iter()
            .map(|name| DiscreteEncoding {
                column: name.clone(),
                categories: observed_categories(
                    &train.column(name).expect("classified column").values,
                ),
            })
            .collect();

        let n = train.n_rows();
        let k = continuous_names.len();
        let mut continuous = Vec::with_capacity(k);
        let mut z = vec![0.0; n * k];
        let mut observed = vec![false; n * k];
        for (j, name) in continuous_names.iter().enumerate() {
            let vals = numeric_values(train, name)?;
            let obs: Vec<f64> = vals.iter().flatten().copied().collect();
            if obs.is_empty() {
                return Err(PreprocessError::Internal(format!(
                    "continuous column `{name}` has no observed training values"
                )));
            }
            let stats = ContinuousStats::from_observed(name, &obs);
            for (i, v) in vals.iter().enumerate() {
                if let Some(v) = v {
                    z[i * k + j] = stats.standardize(*v);
                    observed[i * k + j] = true;
                }
            }
            continuous.push(stats);
        }

        let observed_count: Vec<usize> = (0..k)
            .map(|j| (0..n).filter(|&i| observed[i * k + j]).count())
            .collect();
        let mut impute_order: Vec<usize> = (0..k).collect();
        impute_order.sort_by(|&a, &b| observed_count[b].cmp(&observed_count[a]).then(a.cmp(&b)));

        let mut impute_models = vec![
            ImputeModel {
                intercept: 0.0,
                coefs: vec![0.0; k]
            };
            k
        ];
        for _ in 0..n_chained_iterations {
            for &j in &impute_order {
                let model = if continuous[j].inert {
                    ImputeModel {
                        intercept: 0.0,
                        coefs: vec![0.0; k],
                    }
                } else {
                    let others: Vec<usize> = (0..k).filter(|&c| c != j).collect();
                    let rows: Vec<usize> = (0..n).filter(|&i| observed[i * k + j]).collect();
                    let design: Vec<Vec<f64>> = rows
                        .iter()
                        .map(|&i| others.iter().map(|&c| z[i * k + c]).collect())
                        .collect();
                    let target: Vec<f64> = rows.iter().map(|&i| z[i * k + j]).collect();
                    let (intercept, beta) = ridge(&design, &target, RIDGE_LAMBDA)?;
                    let mut coefs = vec![0.0; k];
                    for (&c, b) in others.iter().zip(beta) {
                        coefs[c] = b;
                    }
                    ImputeModel { intercept, coefs }
                };
                for i in 0..n {
                    if !observed[i * k + j] {
                        z[i * k + j] = model.predict(&z[i * k..(i + 1) * k]);
                    }
                }
                impute_models[j] = model;
            }
        }

        let mut feature_layout = Vec::new();
        for enc in &discrete {
            for cat in &enc.categories {
                feature_layout.push(OutputFeature {
                    name: format!("{}: {}", enc.column, cat),
                    role: FeatureRole::OneHot {
                        source: enc.column.clone(),
                        category: Some(cat.clone()),
                    },
                });
            }
            feature_layout.push(OutputFeature {
                name: format!("{}: <missing>", enc.column),
                role: FeatureRole::OneHot {
                    source: enc.column.clone(),
                    category: None,
                },
            });
        }
        for stats in &continuous {
            feature_layout.push(OutputFeature {
                name: stats.column.clone(),
                role: FeatureRole::Continuous {
                    source: stats.column.clone(),
                },
            });
        }
        for stats in &continuous {
            feature_layout.push(OutputFeature {
                name: format!("{} MISSING", stats.column),
                role: FeatureRole::MissingIndicator {
                    source: stats.column.clone(),
                },
            });
        }
        let mut seen = HashSet::new();
        for f in &feature_layout {
            if !seen.insert(f.name.as_str()) {
                return Err(PreprocessError::Internal(format!(
                    "duplicate output feature name `{}`",
                    f.name
                )));
            }
        }

        Ok(PreprocessorState {
            schema_version: STATE_SCHEMA_VERSION,
            source_columns: train
                .columns
                .iter()
                .map(|c| SourceColumn {
                    name: c.name.clone(),
                    kind: c.kind(),
                })
                .collect(),
            dropped: dropped.into_iter().collect(),
            discrete,
            continuous,
            impute_models,
            impute_order,
            n_chained_iterations,
            ridge_lambda: RIDGE_LAMBDA,
            feature_layout,
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.feature_layout.iter().map(|f| f.name.clone()).collect()
    }

    pub fn n_features(&self) -> usize {
        self.feature_layout.len()
    }

    fn check_columns(&self, fold: &CohortTable) -> Result<(), PreprocessError> {
        let expected: HashMap<&str, ColumnKind> = self
            .source_columns
            .iter()
            .map(|c| (c.name.as_str(), c.kind))
            .collect();
        let mut problems = Vec::new();
        for col in &fold.columns {
            match expected.get(col.name.as_str()) {
                None => problems.push(format!("unexpected column `{}`", col.name)),
                Some(kind) if *kind != col.kind() && !self.dropped.contains(&col.name) => problems
                    .push(format!(
                        "column `{}` has kind {:?}, expected {:?}",
                        col.name,
                        col.kind(),
                        kind
                    )),
                _ => {}
            }
        }
        for c in &self.source_columns {
            if fold.column(&c.name).is_none() {
                problems.push(format!("missing column `{}`", c.name));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PreprocessError::SchemaMismatch(problems.join("; ")))
        }
    }

    /// Transform a fold with the training-fitted state.
    pub fn apply(&self, fold: &CohortTable) -> Result<FeatureMatrix, PreprocessError> {
        self.check_columns(fold)?;
        let n = fold.n_rows();
        let k = self.continuous.len();
        let d = self.feature_layout.len();

        // one-hot slot per row for each discrete group
        let mut onehot_offsets = Vec::with_capacity(self.discrete.len());
        let mut offset = 0;
        for enc in &self.discrete {
            onehot_offsets.push(offset);
            offset += enc.categories.len() + 1;
        }
        let onehot_width = offset;
        let mut onehot_slots: Vec<Vec<usize>> = Vec::with_capacity(self.discrete.len());
        for (enc, &base) in self.discrete.iter().zip(&onehot_offsets) {
            let lookup: HashMap<&str, usize> = enc
                .categories
                .iter()
                .enumerate()
                .map(|(i, c)| (c.as_str(), i))
                .collect();
            let missing_slot = enc.categories.len();
            let col = fold.column(&enc.column).expect("checked column");
            let slots: Vec<usize> = match &col.values {
                ColumnValues::Numeric(v) => v
                    .iter()
                    .map(|x| match x {
                        Some(x) => *lookup
                            .get(category_key(x + 0.0).as_str())
                            .unwrap_or(&missing_slot),
                        None => missing_slot,
                    })
                    .collect(),
                ColumnValues::Categorical(v) => v
                    .iter()
                    .map(|x| match x {
                        Some(x) => *lookup.get(x.as_str()).unwrap_or(&missing_slot),
                        None => missing_slot,
                    })
                    .collect(),
            };
            onehot_slots.push(slots.into_iter().map(|s| base + s).collect());
        }

        let raw_continuous: Vec<&[Option<f64>]> = self
            .continuous
            .iter()
            .map(|s| numeric_values(fold, &s.column))
            .collect::<Result<_, _>>()?;

        let rows: Vec<(Vec<f64>, Vec<u8>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut out = vec![0.0; d];
                for slots in &onehot_slots {
                    out[slots[i]] = 1.0;
                }
                let mut z = vec![0.0; k];
                let mut mask = vec![0u8; k];
                for j in 0..k {
                    match raw_continuous[j][i] {
                        Some(v) => z[j] = self.continuous[j].standardize(v),
                        None => mask[j] = 1,
                    }
                }
                if mask.contains(&1) {
                    for _ in 0..self.n_chained_iterations {
                        for &j in &self.impute_order {
                            if mask[j] == 1 {
                                z[j] = self.impute_models[j].predict(&z);
                            }
                        }
                    }
                }
                out[onehot_width..onehot_width + k].copy_from_slice(&z);
                for j in 0..k {
                    out[onehot_width + k + j] = f64::from(mask[j]);
                }
                (out, mask)
            })
            .collect();

        let mut values = Vec::with_capacity(n * d);
        let mut missing_mask = Vec::with_capacity(n * k);
        for (row, mask) in rows {
            values.extend(row);
            missing_mask.extend(mask);
        }
        Ok(FeatureMatrix {
            n_rows: n,
            names: self.feature_names(),
            values,
            missing_mask,
        })
    }

    /// Indices of output columns grouped by their one-hot source column.
    pub fn one_hot_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, f) in self.feature_layout.iter().enumerate() {
            if let FeatureRole::OneHot { source, .. } = &f.role {
                match groups.last_mut() {
                    Some((s, idx)) if s == source => idx.push(i),
                    _ => groups.push((source.clone(), vec![i])),
                }
            }
        }
        groups
    }
}

impl ContinuousStats {
    /// Population mean and standard deviation of the observed values.
    pub fn from_observed(column: &str, obs: &[f64]) -> Self {
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / obs.len() as f64;
        let std = var.sqrt();
        ContinuousStats {
            column: column.to_string(),
            mean,
            std,
            inert: std < STD_FLOOR,
        }
    }

    pub fn standardize(&self, v: f64) -> f64 {
        if self.inert {
            0.0
        } else {
            (v - self.mean) / self.std
        }
    }
}

impl ImputeModel {
    pub fn predict(&self, z: &[f64]) -> f64 {
        self.intercept + self.coefs.iter().zip(z).map(|(c, v)| c * v).sum::<f64>()
    }
}
