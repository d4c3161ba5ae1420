#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use clinpred::data::ColumnValues;
use clinpred::runner::{self, PipelineConfig, RunManifest, SplitRecord};
use clinpred::{synthetic, CohortTable, Fold, Task};
use serde_json::{Map, Value};

pub struct Fixture {
    pub cfg: PipelineConfig,
    pub manifest: RunManifest,
}

impl Fixture {
    pub fn manifest_path(&self) -> PathBuf {
        self.cfg.out.join("manifest.json")
    }

    pub fn cohort(&self) -> CohortTable {
        runner::load_cohort(&self.cfg).unwrap()
    }

    pub fn split(&self) -> SplitRecord {
        serde_json::from_str(&std::fs::read_to_string(self.cfg.out.join("split.json")).unwrap())
            .unwrap()
    }

    /// Test-fold rows of `task`'s cohort.
    pub fn test_rows(&self, task: Task) -> CohortTable {
        let (cohort, folds) =
            runner::task_cohort(&self.cohort(), &self.split().assignment, task).unwrap();
        cohort.select_rows(&folds.indices(Fold::Test))
    }
}

pub fn config_in(dir: PathBuf, n_rows: usize) -> PipelineConfig {
    std::fs::create_dir_all(&dir).unwrap();
    let cohort = dir.join("cohort.csv");
    std::fs::write(&cohort, synthetic::generate_csv(n_rows, 11)).unwrap();
    PipelineConfig {
        cohort,
        seed: 5,
        n_runs: 1,
        n_chained_iterations: 2,
        bootstrap_n: 20,
        out: dir.join("out"),
        workers: 2,
        ..PipelineConfig::default()
    }
}

/// One small run over all tasks and families, shared by the tests of a binary.
pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let cfg = config_in(dir, 3000);
        let manifest = runner::run_pipeline(cfg.clone()).unwrap();
        Fixture { cfg, manifest }
    })
}

/// Raw row as a wire-format feature map; missing cells become `null`.
pub fn record_json(table: &CohortTable, row: usize) -> Map<String, Value> {
    table
        .columns
        .iter()
        .map(|c| {
            let v = match &c.values {
                ColumnValues::Numeric(v) => v[row].map_or(Value::Null, |x| serde_json::json!(x)),
                ColumnValues::Categorical(v) => v[row].clone().map_or(Value::Null, Value::String),
            };
            (c.name.clone(), v)
        })
        .collect()
}
