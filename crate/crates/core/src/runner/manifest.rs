//! Run manifest: what was produced, from what, and content hashes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Task;
use crate::models::{Family, Hyperparams};

pub const MANIFEST_VERSION: u32 = 1;

/// Stages allowed to read the test fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStage {
    Evaluate,
    Explain,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AccessRecord {
    pub stage: TestStage,
    pub task: Task,
    pub family: Family,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub task: Task,
    pub family: Family,
    pub run_index: usize,
    pub hyperparams: Hyperparams,
    pub validation_auc: f64,
    pub test_auc: f64,
    pub failed_runs: usize,
    pub artifact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub family: Family,
    pub test_auc: f64,
    pub validation_best: Family,
    pub validation_best_test_auc: f64,
    pub artifact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config: serde_json::Value,
    pub cohort_sha256: String,
    pub schema_sha256: Option<String>,
    /// Train, validation and test sizes per task.
    pub fold_sizes: BTreeMap<Task, [usize; 3]>,
    pub best: Vec<BestSummary>,
    pub headline: BTreeMap<Task, Headline>,
    /// Output-relative path to SHA-256 of its content.
    pub files: BTreeMap<String, String>,
    pub test_access: Vec<AccessRecord>,
    /// Unix seconds; not covered by `manifest_hash`.
    pub created_unix: u64,
    pub manifest_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a produced file. Search ledgers are hashed without their
/// wall-time column so timing noise does not change the digest.
pub fn content_hash(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let is_ledger = path
        .parent()
        .and_then(|p| p.file_name())
        .is_some_and(|n| n == "search");
    if !is_ledger {
        return Ok(sha256_hex(&bytes));
    }
    let text = String::from_utf8_lossy(&bytes);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    let skip = header.iter().position(|h| *h == "wall_time_s");
    let mut canonical = String::new();
    for line in std::iter::once(header.join("\t")).chain(lines.map(str::to_string)) {
        let cols: Vec<&str> = line
            .split('\t')
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, c)| c)
            .collect();
        canonical.push_str(&cols.join("\t"));
        canonical.push('\n');
    }
    Ok(sha256_hex(canonical.as_bytes()))
}

impl RunManifest {
    /// Digest over everything except the creation time and the digest itself.
    pub fn compute_hash(&self) -> String {
        let mut copy = self.clone();
        copy.created_unix = 0;
        copy.manifest_hash = String::new();
        sha256_hex(
            serde_json::to_string(&copy)
                .expect("manifest serializes")
                .as_bytes(),
        )
    }

    /// Files whose current content no longer matches the recorded hash.
    pub fn verify(&self, out: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|(rel, hash)| content_hash(&out.join(rel)).map_or(true, |h| &h != *hash))
            .map(|(rel, _)| rel.clone())
            .collect()
    }

    /// Audit violations: any model not evaluated exactly once.
    pub fn audit_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for b in &self.best {
            let n = self
                .test_access
                .iter()
                .filter(|a| {
                    a.stage == TestStage::Evaluate && a.task == b.task && a.family == b.family
                })
                .count();
            if n != 1 {
                problems.push(format!(
                    "{} {} evaluated on the test fold {n} times",
                    b.task, b.family
                ));
            }
        }
        for (task, h) in &self.headline {
            let n = self
                .test_access
                .iter()
                .filter(|a| {
                    a.stage == TestStage::Explain && a.task == *task && a.family == h.family
                })
                .count();
            if n != 1 {
                problems.push(format!("{task} headline explained {n} times"));
            }
        }
        problems
    }

    pub fn headline_artifacts(&self) -> impl Iterator<Item = (Task, &str)> {
        self.headline.iter().map(|(t, h)| (*t, h.artifact.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_hash_ignores_wall_time() {
        let dir = tempfile::tempdir().unwrap();
        let search = dir.path().join("search");
        std::fs::create_dir(&search).unwrap();
        let a = search.join("a.tsv");
        let b = search.join("b.tsv");
        std::fs::write(
            &a,
            "family\tvalidation_auc\twall_time_s\tfailed\nlr\t0.7\t1.234\tfalse\n",
        )
        .unwrap();
        std::fs::write(
            &b,
            "family\tvalidation_auc\twall_time_s\tfailed\nlr\t0.7\t9.9\tfalse\n",
        )
        .unwrap();
        assert_eq!(content_hash(&a).unwrap(), content_hash(&b).unwrap());
        std::fs::write(
            &b,
            "family\tvalidation_auc\twall_time_s\tfailed\nlr\t0.8\t9.9\tfalse\n",
        )
        .unwrap();
        assert_ne!(content_hash(&a).unwrap(), content_hash(&b).unwrap());
    }
}
