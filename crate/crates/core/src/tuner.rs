//! Random hyperparameter search and model selection.

use std::fmt::Write as _;
use std::time::Instant;

use log::warn;
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::metrics::roc_auc;
use crate::models::params::*;
use crate::models::{self, Predictor, TrainData};
use crate::seed;

pub const DEFAULT_RUNS: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum TuneError {
    #[error("no candidates to select from")]
    Empty,
    #[error("all {0} runs failed")]
    AllFailed(usize),
    #[error("worker pool: {0}")]
    Pool(String),
}

pub fn sample_hyperparams(family: Family, seed: u64) -> Hyperparams {
    let mut rng = seed::rng(seed);
    match family {
        Family::Lr => Hyperparams::Lr(LrParams {
            c: *LR_C.choose(&mut rng).unwrap(),
        }),
        Family::Nn => Hyperparams::Nn(NnParams {
            hidden_units: *NN_HIDDEN_UNITS.choose(&mut rng).unwrap(),
            layers: *NN_LAYERS.choose(&mut rng).unwrap(),
            activation: *NN_ACTIVATIONS.choose(&mut rng).unwrap(),
            batch_size: *NN_BATCH_SIZE.choose(&mut rng).unwrap(),
            l2: *NN_L2.choose(&mut rng).unwrap(),
            learning_rate: *NN_LEARNING_RATE.choose(&mut rng).unwrap(),
            dropout: rng.random_range(NN_DROPOUT.0..NN_DROPOUT.1),
        }),
        Family::Rf => Hyperparams::Rf(RfParams {
            max_depth: *RF_MAX_DEPTH.choose(&mut rng).unwrap(),
            n_trees: *RF_N_TREES.choose(&mut rng).unwrap(),
        }),
        Family::Svm => Hyperparams::Svm(SvmParams {
            c: *SVM_C.choose(&mut rng).unwrap(),
            kernel: *SVM_KERNELS.choose(&mut rng).unwrap(),
            degree: *SVM_DEGREE.choose(&mut rng).unwrap(),
        }),
        Family::Xgb => Hyperparams::Xgb(XgbParams {
            subsample: *XGB_SUBSAMPLE.choose(&mut rng).unwrap(),
            max_depth: *XGB_MAX_DEPTH.choose(&mut rng).unwrap(),
            gamma: *XGB_GAMMA.choose(&mut rng).unwrap(),
            learning_rate: *XGB_LEARNING_RATE.choose(&mut rng).unwrap(),
            l1: *XGB_L1.choose(&mut rng).unwrap(),
            l2: *XGB_L2.choose(&mut rng).unwrap(),
            n_rounds: *XGB_ROUNDS.choose(&mut rng).unwrap(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub family: Family,
    pub task: Task,
    pub n_runs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub run_index: usize,
    pub family: Family,
    pub task: Task,
    pub hyperparams: Hyperparams,
    pub train_seed: u64,
    pub validation_auc: f64,
    pub failed: bool,
    pub failure: Option<String>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub predictor: Option<Predictor>,
}

/// Validation AUC, or 0.5 with a warning when the validation labels hold one class.
pub fn validation_auc(scores: &[f64], labels: &[u8]) -> (f64, Option<String>) {
    match roc_auc(scores, labels) {
        Ok(a) => (a, None),
        Err(e) => (0.5, Some(format!("validation AUC set to 0.5: {e}"))),
    }
}

fn run_one(spec: &SearchSpec, data: TrainData<'_>, run_index: usize) -> CandidateRecord {
    let run_seed = spec.seed.wrapping_add(run_index as u64);
    let hyperparams = sample_hyperparams(spec.family, seed::derive(run_seed, "sample"));
    let train_seed = seed::derive(run_seed, "train");
    let started = Instant::now();
    let mut record = CandidateRecord {
        run_index,
        family: spec.family,
        task: spec.task,
        hyperparams,
        train_seed,
        validation_auc: 0.0,
        failed: false,
        failure: None,
        warnings: Vec::new(),
        wall_time_s: 0.0,
        predictor: None,
    };
    match models::fit(&hyperparams, data, train_seed) {
        Ok(fitted) => {
            let scores = fitted.predictor.predict(data.x_val);
            if scores.iter().any(|s| !s.is_finite()) {
                record.failed = true;
                record.failure = Some("non-finite validation scores".into());
            } else {
                let (auc, note) = validation_auc(&scores, data.y_val);
                record.validation_auc = auc;
                record.warnings = fitted.warnings;
                record.warnings.extend(note);
                record.predictor = Some(fitted.predictor);
            }
        }
        Err(e) => {
            record.failed = true;
            record.failure = Some(e.to_string());
        }
    }
    record.wall_time_s = started.elapsed().as_secs_f64();
    record
}

/// Train `n_runs` candidates. Runs execute in parallel but come back in
/// `run_index` order, so the result does not depend on scheduling.
pub fn run_search(
    spec: &SearchSpec,
    data: TrainData<'_>,
    workers: usize,
) -> Result<Vec<CandidateRecord>, TuneError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| TuneError::Pool(e.to_string()))?;
    let records: Vec<CandidateRecord> = pool.install(|| {
        (0..spec.n_runs)
            .into_par_iter()
            .map(|i| run_one(spec, data, i))
            .collect()
    });
    let failed = records.iter().filter(|r| r.failed).count();
    if failed * 2 >= records.len() && failed > 0 {
        warn!(
            "{} search on {}: {failed} of {} runs failed",
            spec.family.label(),
            spec.task,
            records.len()
        );
    }
    Ok(records)
}

/// Highest validation AUC; ties go to the lowest run index.
pub fn select_best(candidates: &[CandidateRecord]) -> Result<&CandidateRecord, TuneError> {
    if candidates.is_empty() {
        return Err(TuneError::Empty);
    }
    let mut best: Option<&CandidateRecord> = None;
    for c in candidates.iter().filter(|c| !c.failed) {
        let better = match best {
            None => true,
            Some(b) => {
                c.validation_auc > b.validation_auc
                    || (c.validation_auc == b.validation_auc && c.run_index < b.run_index)
            }
        };
        if better {
            best = Some(c);
        }
    }
    best.ok_or(TuneError::AllFailed(candidates.len()))
}

pub const LEDGER_HEADER: &str =
    "family\ttask\trun_index\thyperparams\tvalidation_auc\twall_time_s\tfailed";

/// One tab-separated row per run.
pub fn ledger_tsv(records: &[CandidateRecord]) -> String {
    let mut out = String::from(LEDGER_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.3}\t{}",
            r.family,
            r.task,
            r.run_index,
            r.hyperparams.describe(),
            r.validation_auc,
            r.wall_time_s,
            r.failed
        );
    }
    out
}
