//! Cohort ingestion, task labels and the stratified three-way split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("configuration error: column `{0}` named in schema is not present in the cohort file")]
    MissingColumn(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ingestion error at row {row}, column `{column}`: {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },
    #[error("empty cohort")]
    EmptyCohort,
    #[error("no positive patients")]
    NoPositivePatients,
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// The three prediction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[serde(rename = "sars_cov_2")]
    SarsCov2,
    Admission,
    Icu,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::SarsCov2, Task::Admission, Task::Icu];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::SarsCov2 => "sars_cov_2",
            Task::Admission => "admission",
            Task::Icu => "icu",
        }
    }

    /// Admission tasks are restricted to SARS-CoV-2 positive patients.
    pub fn uses_positive_subcohort(self) -> bool {
        !matches!(self, Task::SarsCov2)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sars_cov_2" => Ok(Task::SarsCov2),
            "admission" => Ok(Task::Admission),
            "icu" => Ok(Task::Icu),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnValues::Numeric(v) => v[row].is_none(),
            ColumnValues::Categorical(v) => v[row].is_none(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnValues {
        match self {
            ColumnValues::Numeric(v) => ColumnValues::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnValues::Categorical(v) => {
                ColumnValues::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }
}

/// One feature column with explicit missingness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawColumn {
    pub name: String,
    pub values: ColumnValues,
}

impl RawColumn {
    pub fn kind(&self) -> ColumnKind {
        match self.values {
            ColumnValues::Numeric(_) => ColumnKind::Numeric,
            ColumnValues::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.values.len())
            .filter(|&r| self.values.is_missing(r))
            .count()
    }
}

/// Maps semantic roles onto cohort file columns.
///
/// Defaults follow the public Kaggle cohort layout. Admission is read from the
/// regular-ward column and ICU from the intensive-care column; the
/// semi-intensive column is excluded from the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub label_sars_cov_2: String,
    pub label_admission: Vec<String>,
    pub label_icu: Vec<String>,
    pub age_column: String,
    pub positive_token: String,
    pub id_column: Option<String>,
    /// Columns removed from the feature set without being labels.
    pub exclude: Vec<String>,
    /// Columns that must parse as numbers; others are inferred.
    pub numeric_columns: Vec<String>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            label_sars_cov_2: "SARS-Cov-2 exam result".into(),
            label_admission: vec!["Patient addmited to regular ward (1=yes, 0=no)".into()],
            label_icu: vec!["Patient addmited to intensive care unit (1=yes, 0=no)".into()],
            age_column: "Patient age quantile".into(),
            positive_token: "positive".into(),
            id_column: Some("Patient ID".into()),
            exclude: vec!["Patient addmited to semi-intensive unit (1=yes, 0=no)".into()],
            numeric_columns: vec!["Patient age quantile".into()],
        }
    }
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl SchemaConfig {
    /// Parse `key = value` lines. Blank lines and `#` comments are ignored;
    /// list-valued keys separate entries with `;` (column names contain commas).
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut schema = SchemaConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DataError::Config(format!(
                    "schema line {}: expected `key = value`",
                    lineno + 1
                ))
            })?;
            let value = value.trim();
            match key.trim() {
                "label_sars_cov_2" => schema.label_sars_cov_2 = value.into(),
                "label_admission" => schema.label_admission = split_list(value),
                "label_icu" => schema.label_icu = split_list(value),
                "age_column" => schema.age_column = value.into(),
                "positive_token" => schema.positive_token = value.into(),
                "id_column" => {
                    schema.id_column = if value.is_empty() {
                        None
                    } else {
                        Some(value.into())
                    }
                }
                "exclude" => schema.exclude = split_list(value),
                "numeric_columns" => schema.numeric_columns = split_list(value),
                other => {
                    return Err(DataError::Config(format!(
                        "schema line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        if schema.label_admission.is_empty() || schema.label_icu.is_empty() {
            return Err(DataError::Config("label columns must not be empty".into()));
        }
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn non_feature_columns(&self) -> HashSet<&str> {
        let mut set: HashSet<&str> = HashSet::new();
        set.insert(&self.label_sars_cov_2);
        set.extend(self.label_admission.iter().map(String::as_str));
        set.extend(self.label_icu.iter().map(String::as_str));
        set.extend(self.exclude.iter().map(String::as_str));
        if let Some(id) = &self.id_column {
            set.insert(id);
        }
        set
    }
}

/// Binary outcome vectors for the three tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub sars_cov_2: Vec<u8>,
    pub admission: Vec<u8>,
    pub icu: Vec<u8>,
}

impl Labels {
    pub fn for_task(&self, task: Task) -> &[u8] {
        match task {
            Task::SarsCov2 => &self.sars_cov_2,
            Task::Admission => &self.admission,
            Task::Icu => &self.icu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub ids: Option<Vec<String>>,
    /// Feature columns only; labels, id and excluded columns never appear here.
    pub columns: Vec<RawColumn>,
    pub labels: Labels,
    pub age_quantile: Vec<u8>,
}

impl CohortTable {
    pub fn n_rows(&self) -> usize {
        self.age_quantile.len()
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn select_rows(&self, rows: &[usize]) -> CohortTable {
        let pick = |v: &[u8]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        CohortTable {
            ids: self
                .ids
                .as_ref()
                .map(|ids| rows.iter().map(|&r| ids[r].clone()).collect()),
            columns: self
                .columns
                .iter()
                .map(|c| RawColumn {
                    name: c.name.clone(),
                    values: c.values.select(rows),
                })
                .collect(),
            labels: Labels {
                sars_cov_2: pick(&self.labels.sars_cov_2),
                admission: pick(&self.labels.admission),
                icu: pick(&self.labels.icu),
            },
            age_quantile: pick(&self.age_quantile),
        }
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_label(cell: &str, token: &str) -> Option<u8> {
    if cell.eq_ignore_ascii_case(token) {
        return Some(1);
    }
    match parse_number(cell) {
        Some(1.0) => Some(1),
        Some(0.0) => Some(0),
        Some(_) => None,
        None => Some(0),
    }
}

/// Read a comma-separated cohort with a header row.
pub fn load_cohort(path: &Path, schema: &SchemaConfig) -> Result<CohortTable, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_cohort(file, schema)
}

pub fn read_cohort<R: std::io::Read>(
    reader: R,
    schema: &SchemaConfig,
) -> Result<CohortTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in rdr.records() {
        let record = record?;
        for (col, cell) in record.iter().enumerate() {
            cells[col].push(cell.trim().to_string());
        }
    }
    let n = cells.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(DataError::EmptyCohort);
    }

    let index_of = |name: &str| -> Result<usize, DataError> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };

    let read_labels = |names: &[String]| -> Result<Vec<u8>, DataError> {
        let mut out = vec![0u8; n];
        for name in names {
            let col = index_of(name)?;
            for (row, cell) in cells[col].iter().enumerate() {
                if cell.is_empty() {
                    return Err(DataError::Ingest {
                        row: row + 1,
                        column: name.clone(),
                        message: "label value is missing".into(),
                    });
                }
                let v =
                    parse_label(cell, &schema.positive_token).ok_or_else(|| DataError::Ingest {
                        row: row + 1,
                        column: name.clone(),
                        message: format!("label value `{cell}` is not 0/1 or the positive token"),
                    })?;
                out[row] |= v;
            }
        }
        Ok(out)
    };

    let sars_cov_2 = read_labels(std::slice::from_ref(&schema.label_sars_cov_2))?;
    let admission = read_labels(&schema.label_admission)?;
    let icu = read_labels(&schema.label_icu)?;

    let age_col = index_of(&schema.age_column)?;
    let age_quantile = cells[age_col]
        .iter()
        .enumerate()
        .map(|(row, cell)| match parse_number(cell) {
            Some(v) if v.fract() == 0.0 && (0.0..=19.0).contains(&v) => Ok(v as u8),
            _ => Err(DataError::Ingest {
                row: row + 1,
                column: schema.age_column.clone(),
                message: format!("age quantile `{cell}` is not an integer in [0, 19]"),
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;

    for name in schema.exclude.iter().chain(&schema.numeric_columns) {
        index_of(name)?;
    }
    let ids = match &schema.id_column {
        Some(name) => Some(cells[index_of(name)?].clone()),
        None => None,
    };

    let skip = schema.non_feature_columns();
    let mut columns = Vec::new();
    for (col, name) in header.iter().enumerate() {
        if skip.contains(name.as_str()) {
            continue;
        }
        let forced = schema.numeric_columns.iter().any(|c| c == name);
        let all_numeric = cells[col]
            .iter()
            .all(|c| c.is_empty() || parse_number(c).is_some());
        let values = if forced || all_numeric {
            let parsed = cells[col]
                .iter()
                .enumerate()
                .map(|(row, cell)| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        parse_number(cell)
                            .map(Some)
                            .ok_or_else(|| DataError::Ingest {
                                row: row + 1,
                                column: name.clone(),
                                message: format!("cannot parse `{cell}` as a number"),
                            })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            ColumnValues::Numeric(parsed)
        } else {
            ColumnValues::Categorical(
                cells[col]
                    .iter()
                    .map(|c| if c.is_empty() { None } else { Some(c.clone()) })
                    .collect(),
            )
        };
        columns.push(RawColumn {
            name: name.clone(),
            values,
        });
    }

    Ok(CohortTable {
        ids,
        columns,
        labels: Labels {
            sars_cov_2,
            admission,
            icu,
        },
        age_quantile,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fold {
    Train,
    Validation,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 3] = [Fold::Train, Fold::Validation, Fold::Test];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: Vec<Fold>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn indices(&self, fold: Fold) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(_, f)| **f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for f in &self.folds {
            sizes[f.index()] += 1;
        }
        sizes
    }
}

type StratumKey = (u8, u8, u8, u8);

/// Stratified split over age quantile × the three labels.
///
/// Each stratum receives the floor of its exact quota per fold. The leftover
/// patients of a stratum (at most one per fold) go to the folds with the
/// largest running shortfall against the cumulative exact targets, ties broken
/// by a seeded draw weighted by the fractional quotas. Positive strata are
/// allocated first so the positive subcohort is balanced on its own.
pub fn stratified_split(
    cohort: &CohortTable,
    ratios: [f64; 3],
    seed: u64,
) -> Result<FoldAssignment, DataError> {
    let n = cohort.n_rows();
    if n == 0 {
        return Err(DataError::EmptyCohort);
    }
    if ratios.iter().any(|r| r.is_nan() || *r < 0.0)
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(DataError::Ratios(ratios));
    }

    let mut strata: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let key = (
            cohort.labels.sars_cov_2[i],
            cohort.age_quantile[i],
            cohort.labels.admission[i],
            cohort.labels.icu[i],
        );
        strata.entry(key).or_default().push(i);
    }

    let mut rng = seed::rng(seed::derive(seed, "split"));
    let mut order: Vec<(StratumKey, Vec<usize>)> = strata.into_iter().collect();
    for (_, members) in order.iter_mut() {
        members.shuffle(&mut rng);
    }
    // positives first, then negatives; seeded order within each group
    let (mut pos, mut neg): (Vec<_>, Vec<_>) = order.into_iter().partition(|(k, _)| k.0 == 1);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut folds = vec![Fold::Train; n];
    let mut target = [0.0f64; 3];
    let mut assigned = [0.0f64; 3];
    for (_, members) in pos.into_iter().chain(neg) {
        let size = members.len();
        let exact: Vec<f64> = ratios.iter().map(|r| r * size as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|q| (q + 1e-9).floor() as usize).collect();
        let mut extra = size - counts.iter().sum::<usize>();
        let mut eligible: Vec<bool> = exact
            .iter()
            .zip(&counts)
            .map(|(q, &c)| q - c as f64 > 1e-9)
            .collect();
        for f in 0..3 {
            target[f] += exact[f];
            assigned[f] += counts[f] as f64;
        }
        while extra > 0 {
            let best = (0..3)
                .filter(|&f| eligible[f])
                .map(|f| target[f] - assigned[f])
                .fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..3)
                .filter(|&f| eligible[f] && (target[f] - assigned[f] - best).abs() < 1e-9)
                .collect();
            let pick = if tied.len() == 1 {
                tied[0]
            } else {
                let weights: Vec<f64> = tied.iter().map(|&f| exact[f] - counts[f] as f64).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut chosen = *tied.last().unwrap();
                for (&f, w) in tied.iter().zip(&weights) {
                    if u < *w {
                        chosen = f;
                        break;
                    }
                    u -= w;
                }
                chosen
            };
            counts[pick] += 1;
            assigned[pick] += 1.0;
            eligible[pick] = false;
            extra -= 1;
        }
        let mut cursor = 0;
        for fold in Fold::ALL {
            for &patient in &members[cursor..cursor + counts[fold.index()]] {
                folds[patient] = fold;
            }
            cursor += counts[fold.index()];
        }
    }
    Ok(FoldAssignment { folds, seed })
}

/// Restrict to SARS-CoV-2 positive patients, keeping each patient's fold.
pub fn subcohort_positive(
    cohort: &CohortTable,
    folds: &FoldAssignment,
) -> Result<(CohortTable, FoldAssignment), DataError> {
    let rows: Vec<usize> = (0..cohort.n_rows())
        .filter(|&i| cohort.labels.sars_cov_2[i] == 1)
        .collect();
    if rows.is_empty() {
        return Err(DataError::NoPositivePatients);
    }
    let sub = cohort.select_rows(&rows);
    let sub_folds = FoldAssignment {
        folds: rows.iter().map(|&r| folds.folds[r]).collect(),
        seed: folds.seed,
    };
    Ok((sub, sub_folds))
}
