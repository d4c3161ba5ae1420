//! End-to-end pipeline: split, preprocess, search, evaluate, explain, report.
//!
//! Each stage reads the previous stage's files from the output directory and
//! writes its own, so any stage can be rerun on its own.
//!
//! Output layout, relative to `out`:
//!
//! ```text
//! split.json
//! test_access.json
//! manifest.json
//! <task>/preprocessor.json
//! <task>/search/<family>.tsv
//! <task>/models/<family>.json
//! <task>/eval/<family>.json
//! <task>/curves/roc_<family>.tsv, pr_<family>.tsv
//! <task>/results.json
//! <task>/table.tsv
//! <task>/importance.json, importance.tsv, importance_grouped.tsv
//! ```

pub mod config;
pub mod manifest;
pub mod report;
pub mod score;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{self, CohortTable, Fold, FoldAssignment, SchemaConfig, Task};
use crate::explain::{self, ImportanceReport};
use crate::metrics::{self, Metric};
use crate::models::{Family, ModelArtifact, TrainData, ARTIFACT_FORMAT_VERSION};
use crate::preprocess::{FeatureMatrix, PreprocessorState};
use crate::seed;
use crate::tuner::{self, SearchSpec};

pub use config::PipelineConfig;
pub use manifest::{AccessRecord, RunManifest, TestStage};
pub use report::{FamilyResult, TaskResults};

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {message}")]
pub struct RunError {
    pub stage: &'static str,
    pub message: String,
}

fn err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> RunError {
    move |e| RunError {
        stage,
        message: e.to_string(),
    }
}

fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    write_text(
        path,
        &serde_json::to_string_pretty(value).expect("serializable"),
    )
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Output-directory paths.
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Self {
        Layout {
            out: out.to_path_buf(),
        }
    }
    pub fn split(&self) -> PathBuf {
        self.out.join("split.json")
    }
    pub fn access_log(&self) -> PathBuf {
        self.out.join("test_access.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.out.join("manifest.json")
    }
    pub fn failed_marker(&self) -> PathBuf {
        self.out.join("FAILED")
    }
    pub fn task_dir(&self, task: Task) -> PathBuf {
        self.out.join(task.as_str())
    }
    pub fn preprocessor(&self, task: Task) -> PathBuf {
        self.task_dir(task).join("preprocessor.json")
    }
    pub fn ledger(&self, task: Task, family: Family) -> PathBuf {
        self.task_dir(task)
            .join("search")
            .join(format!("{family}.tsv"))
    }
    pub fn model(&self, task: Task, family: Family) -> PathBuf {
        self.task_dir(task)
            .join("models")
            .join(format!("{family}.json"))
    }
    pub fn eval(&self, task: Task, family: Family) -> PathBuf {
        self.task_dir(task)
            .join("eval")
            .join(format!("{family}.json"))
    }
    pub fn results(&self, task: Task) -> PathBuf {
        self.task_dir(task).join("results.json")
    }
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.out)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub assignment: FoldAssignment,
    pub fold_sizes: BTreeMap<Task, [usize; 3]>,
}

pub fn load_schema(cfg: &PipelineConfig) -> Result<SchemaConfig, RunError> {
    match &cfg.schema {
        Some(p) => SchemaConfig::load(p).map_err(err("load")),
        None => Ok(SchemaConfig::default()),
    }
}

pub fn load_cohort(cfg: &PipelineConfig) -> Result<CohortTable, RunError> {
    data::load_cohort(&cfg.cohort, &load_schema(cfg)?).map_err(err("load"))
}

/// Cohort and folds for one task: tasks on the positive subcohort inherit
/// each patient's fold from the full split.
pub fn task_cohort(
    cohort: &CohortTable,
    folds: &FoldAssignment,
    task: Task,
) -> Result<(CohortTable, FoldAssignment), RunError> {
    if task.uses_positive_subcohort() {
        data::subcohort_positive(cohort, folds).map_err(err("split"))
    } else {
        Ok((cohort.clone(), folds.clone()))
    }
}

/// Pipeline inputs loaded once and shared by the stages.
pub struct Context {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    cohort: Option<CohortTable>,
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> Self {
        let layout = Layout::new(&cfg.out);
        Context {
            cfg,
            layout,
            cohort: None,
        }
    }

    fn cohort(&mut self) -> Result<&CohortTable, RunError> {
        if self.cohort.is_none() {
            self.cohort = Some(load_cohort(&self.cfg)?);
        }
        Ok(self.cohort.as_ref().expect("loaded"))
    }

    fn split_record(&self) -> Result<SplitRecord, RunError> {
        read_json(&self.layout.split()).map_err(err("split"))
    }

    fn fold_rows(&mut self, task: Task) -> Result<(CohortTable, FoldAssignment), RunError> {
        let split = self.split_record()?;
        let cohort = self.cohort()?;
        if split.assignment.folds.len() != cohort.n_rows() {
            return Err(RunError {
                stage: "split",
                message: "split does not match the cohort".into(),
            });
        }
        task_cohort(cohort, &split.assignment, task)
    }

    fn preprocessor(&self, task: Task) -> Result<PreprocessorState, RunError> {
        read_json(&self.layout.preprocessor(task)).map_err(err("preprocess"))
    }

    /// Training and validation matrices. The test fold is not touched here.
    fn dev_matrices(&mut self, task: Task) -> Result<DevData, RunError> {
        let (cohort, folds) = self.fold_rows(task)?;
        let state = self.preprocessor(task)?;
        let part = |fold: Fold| -> Result<(FeatureMatrix, Vec<u8>), RunError> {
            let t = cohort.select_rows(&folds.indices(fold));
            let x = state.apply(&t).map_err(err("preprocess"))?;
            Ok((x, t.labels.for_task(task).to_vec()))
        };
        let (x_train, y_train) = part(Fold::Train)?;
        let (x_val, y_val) = part(Fold::Validation)?;
        Ok(DevData {
            x_train,
            y_train,
            x_val,
            y_val,
        })
    }

    /// The only way to reach test-fold rows. Each call is logged.
    fn test_matrix(
        &mut self,
        task: Task,
        stage: TestStage,
        families: &[Family],
    ) -> Result<(FeatureMatrix, Vec<u8>), RunError> {
        let (cohort, folds) = self.fold_rows(task)?;
        let state = self.preprocessor(task)?;
        let t = cohort.select_rows(&folds.indices(Fold::Test));
        let x = state.apply(&t).map_err(err("preprocess"))?;
        let mut log: Vec<AccessRecord> = read_json(&self.layout.access_log()).unwrap_or_default();
        log.retain(|a| !(a.stage == stage && a.task == task));
        log.extend(families.iter().map(|&family| AccessRecord {
            stage,
            task,
            family,
            rows: x.n_rows,
        }));
        log.sort();
        write_json(&self.layout.access_log(), &log).map_err(err("audit"))?;
        Ok((x, t.labels.for_task(task).to_vec()))
    }
}

struct DevData {
    x_train: FeatureMatrix,
    y_train: Vec<u8>,
    x_val: FeatureMatrix,
    y_val: Vec<u8>,
}

pub fn stage_split(ctx: &mut Context) -> Result<SplitRecord, RunError> {
    let ratios = ctx.cfg.ratios;
    let seed = ctx.cfg.seed;
    let cohort = ctx.cohort()?;
    let assignment = data::stratified_split(cohort, ratios, seed).map_err(err("split"))?;
    let mut fold_sizes = BTreeMap::new();
    for task in Task::ALL {
        let (_, f) = task_cohort(cohort, &assignment, task)?;
        fold_sizes.insert(task, f.sizes());
    }
    let record = SplitRecord {
        seed,
        assignment,
        fold_sizes,
    };
    write_json(&ctx.layout.split(), &record).map_err(err("split"))?;
    info!("split: {:?}", record.fold_sizes);
    Ok(record)
}

pub fn stage_preprocess(ctx: &mut Context) -> Result<(), RunError> {
    for task in ctx.cfg.tasks.clone() {
        let (cohort, folds) = ctx.fold_rows(task)?;
        let train = cohort.select_rows(&folds.indices(Fold::Train));
        let state = PreprocessorState::fit(&train, ctx.cfg.n_chained_iterations)
            .map_err(err("preprocess"))?;
        info!(
            "{task}: {} output features ({} columns dropped)",
            state.n_features(),
            state.dropped.len()
        );
        write_json(&ctx.layout.preprocessor(task), &state).map_err(err("preprocess"))?;
    }
    Ok(())
}

/// Searches every configured family, persisting the ledger and the
/// validation-selected artifact with its operating threshold.
pub fn stage_search(ctx: &mut Context) -> Result<(), RunError> {
    for task in ctx.cfg.tasks.clone() {
        let dev = ctx.dev_matrices(task)?;
        let state = ctx.preprocessor(task)?;
        let data = TrainData {
            x_train: &dev.x_train,
            y_train: &dev.y_train,
            x_val: &dev.x_val,
            y_val: &dev.y_val,
        };
        for family in ctx.cfg.families.clone() {
            let spec = SearchSpec {
                family,
                task,
                n_runs: ctx.cfg.n_runs,
                seed: seed::derive(ctx.cfg.seed, &format!("search/{task}/{family}")),
            };
            let records = tuner::run_search(&spec, data, ctx.cfg.workers).map_err(err("search"))?;
            write_text(
                &ctx.layout.ledger(task, family),
                &tuner::ledger_tsv(&records),
            )
            .map_err(err("search"))?;
            let best = tuner::select_best(&records).map_err(err("search"))?;
            let predictor = best
                .predictor
                .clone()
                .expect("successful run keeps its model");
            let val_scores = predictor.predict(&dev.x_val);
            let mut warnings = best.warnings.clone();
            let operating_threshold =
                match metrics::select_operating_threshold(&val_scores, &dev.y_val) {
                    Ok(op) => op.threshold,
                    Err(e) => {
                        warnings.push(format!("operating threshold set to 0.5: {e}"));
                        0.5
                    }
                };
            let failed = records.iter().filter(|r| r.failed).count();
            if failed > 0 {
                warnings.push(format!("{failed} of {} runs failed", records.len()));
            }
            let artifact = ModelArtifact {
                format_version: ARTIFACT_FORMAT_VERSION,
                family,
                hyperparams: best.hyperparams,
                predictor,
                train_seed: best.train_seed,
                task,
                preprocessor: state.clone(),
                validation_auc: best.validation_auc,
                operating_threshold,
                warnings,
            };
            artifact
                .save(&ctx.layout.model(task, family))
                .map_err(err("search"))?;
            info!(
                "{task} {}: best run {} validation AUC {:.4}",
                family.label(),
                best.run_index,
                best.validation_auc
            );
        }
    }
    Ok(())
}

/// Scores each selected model once on the test fold and compares every family
/// against the best test AUC.
pub fn stage_evaluate(ctx: &mut Context) -> Result<Vec<TaskResults>, RunError> {
    let mut all = Vec::new();
    for task in ctx.cfg.tasks.clone() {
        let families = ctx.cfg.families.clone();
        let artifacts: Vec<ModelArtifact> = families
            .iter()
            .map(|&f| ModelArtifact::load(&ctx.layout.model(task, f)).map_err(err("evaluate")))
            .collect::<Result<_, _>>()?;
        let (x_test, y_test) = ctx.test_matrix(task, TestStage::Evaluate, &families)?;
        let indices = metrics::bootstrap_indices(
            &y_test,
            ctx.cfg.bootstrap_n,
            seed::derive(ctx.cfg.seed, &format!("bootstrap/{task}")),
        )
        .map_err(err("evaluate"))?;
        let mut evals = Vec::new();
        for a in &artifacts {
            let scores = a.predict(&x_test).map_err(err("evaluate"))?;
            let e = metrics::evaluate(&scores, &y_test, a.operating_threshold, &indices)
                .map_err(err("evaluate"))?;
            write_json(&ctx.layout.eval(task, a.family), &e).map_err(err("evaluate"))?;
            evals.push(e);
        }
        let argmax = |key: &dyn Fn(usize) -> f64| {
            (0..families.len()).fold(0, |best, i| if key(i) > key(best) { i } else { best })
        };
        let head = argmax(&|i| evals[i].auc.point);
        let val_best = argmax(&|i| artifacts[i].validation_auc);
        let head_samples = evals[head].samples(Metric::Auc);
        let rows = families
            .iter()
            .zip(evals)
            .enumerate()
            .map(|(i, (&family, eval))| {
                let significance = (i != head).then(|| {
                    metrics::pairwise_significance(
                        &head_samples,
                        &eval.samples(Metric::Auc),
                        ctx.cfg.alpha,
                    )
                });
                FamilyResult {
                    family,
                    eval,
                    significance,
                }
            })
            .collect();
        let results = TaskResults {
            task,
            headline: families[head],
            validation_best: families[val_best],
            rows,
        };
        write_json(&ctx.layout.results(task), &results).map_err(err("evaluate"))?;
        info!(
            "{task}: headline {} test AUC {:.4}",
            families[head].label(),
            results.rows[head].eval.auc.point
        );
        all.push(results);
    }
    Ok(all)
}

pub fn stage_explain(ctx: &mut Context) -> Result<BTreeMap<Task, ImportanceReport>, RunError> {
    let mut out = BTreeMap::new();
    for task in ctx.cfg.tasks.clone() {
        let results: TaskResults = read_json(&ctx.layout.results(task)).map_err(err("explain"))?;
        let artifact = ModelArtifact::load(&ctx.layout.model(task, results.headline))
            .map_err(err("explain"))?;
        let (x_test, y_test) = ctx.test_matrix(task, TestStage::Explain, &[results.headline])?;
        if x_test.names != artifact.preprocessor.feature_names() {
            return Err(RunError {
                stage: "explain",
                message: "test layout differs from the artifact".into(),
            });
        }
        let report = explain::marginal_importance(&artifact.predictor, &x_test, &y_test)
            .map_err(err("explain"))?;
        if report.degenerate {
            warn!("{task}: no feature raised the loss when masked; importances are uniform");
        }
        let grouped =
            explain::grouped_importance(&report, &artifact.preprocessor).map_err(err("explain"))?;
        let dir = ctx.layout.task_dir(task);
        write_json(&dir.join("importance.json"), &report).map_err(err("explain"))?;
        write_text(&dir.join("importance.tsv"), &report.to_tsv()).map_err(err("explain"))?;
        write_text(&dir.join("importance_grouped.tsv"), &grouped.to_tsv())
            .map_err(err("explain"))?;
        out.insert(task, report);
    }
    Ok(out)
}

fn file_hashes(
    layout: &Layout,
    dir: &Path,
    into: &mut BTreeMap<String, String>,
) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            file_hashes(layout, &path, into)?;
        } else {
            let rel = layout.relative(&path);
            if rel != "manifest.json" && rel != "FAILED" {
                into.insert(rel, manifest::content_hash(&path)?);
            }
        }
    }
    Ok(())
}

/// Writes result tables and curve files, then the manifest over every output.
pub fn stage_report(ctx: &mut Context) -> Result<RunManifest, RunError> {
    let split = ctx.split_record()?;
    let mut best = Vec::new();
    let mut headline = BTreeMap::new();
    for task in ctx.cfg.tasks.clone() {
        let results: TaskResults = read_json(&ctx.layout.results(task)).map_err(err("report"))?;
        let dir = ctx.layout.task_dir(task);
        write_text(&dir.join("table.tsv"), &report::task_table(&results)).map_err(err("report"))?;
        let mut test_auc = BTreeMap::new();
        for row in &results.rows {
            let f = row.family;
            write_text(
                &dir.join("curves").join(format!("roc_{f}.tsv")),
                &report::roc_table(&row.eval),
            )
            .map_err(err("report"))?;
            write_text(
                &dir.join("curves").join(format!("pr_{f}.tsv")),
                &report::pr_table(&row.eval),
            )
            .map_err(err("report"))?;
            test_auc.insert(f, row.eval.auc.point);
            let artifact =
                ModelArtifact::load(&ctx.layout.model(task, f)).map_err(err("report"))?;
            let ledger =
                std::fs::read_to_string(ctx.layout.ledger(task, f)).map_err(err("report"))?;
            let (run_index, failed_runs) = ledger_summary(&ledger, artifact.validation_auc);
            best.push(manifest::BestSummary {
                task,
                family: f,
                run_index,
                hyperparams: artifact.hyperparams,
                validation_auc: artifact.validation_auc,
                test_auc: row.eval.auc.point,
                failed_runs,
                artifact: ctx.layout.relative(&ctx.layout.model(task, f)),
            });
        }
        headline.insert(
            task,
            manifest::Headline {
                family: results.headline,
                test_auc: test_auc[&results.headline],
                validation_best: results.validation_best,
                validation_best_test_auc: test_auc[&results.validation_best],
                artifact: ctx
                    .layout
                    .relative(&ctx.layout.model(task, results.headline)),
            },
        );
    }
    let cohort_sha256 = sha_of(&ctx.cfg.cohort).map_err(err("report"))?;
    let schema_sha256 = ctx
        .cfg
        .schema
        .as_ref()
        .map(|p| sha_of(p))
        .transpose()
        .map_err(err("report"))?;
    let mut files = BTreeMap::new();
    file_hashes(&ctx.layout, &ctx.layout.out, &mut files).map_err(err("report"))?;
    let mut m = RunManifest {
        format_version: manifest::MANIFEST_VERSION,
        config: ctx.cfg.fingerprint(),
        cohort_sha256,
        schema_sha256,
        fold_sizes: split.fold_sizes,
        best,
        headline,
        files,
        test_access: read_json(&ctx.layout.access_log()).map_err(err("report"))?,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        manifest_hash: String::new(),
    };
    m.manifest_hash = m.compute_hash();
    for p in m.audit_problems() {
        warn!("test-fold audit: {p}");
    }
    write_json(&ctx.layout.manifest(), &m).map_err(err("report"))?;
    Ok(m)
}

fn sha_of(path: &Path) -> std::io::Result<String> {
    Ok(manifest::sha256_hex(&std::fs::read(path)?))
}

/// Run index of the selected candidate and the number of failed runs.
fn ledger_summary(ledger: &str, best_auc: f64) -> (usize, usize) {
    let mut run = usize::MAX;
    let mut failed = 0;
    for line in ledger.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 7 {
            continue;
        }
        let idx: usize = cols[2].parse().unwrap_or(usize::MAX);
        let auc: f64 = cols[4].parse().unwrap_or(f64::NAN);
        let is_failed = cols[6] == "true";
        failed += usize::from(is_failed);
        if !is_failed && auc == best_auc {
            run = run.min(idx);
        }
    }
    (run, failed)
}

/// Runs every stage in order. On failure a `FAILED` marker naming the stage is
/// left next to whatever partial outputs exist.
pub fn run_pipeline(cfg: PipelineConfig) -> Result<RunManifest, RunError> {
    let mut ctx = Context::new(cfg);
    let _ = std::fs::remove_file(ctx.layout.failed_marker());
    let _ = std::fs::remove_file(ctx.layout.access_log());
    let result = (|| {
        stage_split(&mut ctx)?;
        stage_preprocess(&mut ctx)?;
        stage_search(&mut ctx)?;
        stage_evaluate(&mut ctx)?;
        stage_explain(&mut ctx)?;
        stage_report(&mut ctx)
    })();
    if let Err(e) = &result {
        let _ = write_text(&ctx.layout.failed_marker(), &format!("{e}\n"));
    }
    result
}

pub fn load_manifest(path: &Path) -> Result<RunManifest, String> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_summary_finds_lowest_matching_run() {
        let ledger = format!(
            "{}\nlr\ticu\t0\tC=1\t0.7\t0.1\tfalse\nlr\ticu\t1\tC=0.1\t0.9\t0.1\tfalse\nlr\ticu\t2\tC=10\t0\t0.1\ttrue\nlr\ticu\t3\tC=1\t0.9\t0.1\tfalse\n",
            tuner::LEDGER_HEADER
        );
        assert_eq!(ledger_summary(&ledger, 0.9), (1, 1));
    }
}
