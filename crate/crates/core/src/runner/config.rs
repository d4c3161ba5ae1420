//! Pipeline configuration from a key-value file, environment and flags.
//!
//! Precedence, highest first: explicit overrides (command-line flags), then
//! `CLINPRED_<KEY>` environment variables, then the config file, then the
//! built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::metrics::DEFAULT_BOOTSTRAP;
use crate::models::Family;
use crate::preprocess::DEFAULT_CHAINED_ITERATIONS;
use crate::tuner::DEFAULT_RUNS;

pub const ENV_PREFIX: &str = "CLINPRED_";

/// Every key accepted in a config file, environment variable or override.
pub const KEYS: [&str; 12] = [
    "cohort",
    "schema",
    "seed",
    "n_runs",
    "n_chained_iterations",
    "bootstrap_n",
    "alpha",
    "out",
    "workers",
    "tasks",
    "families",
    "ratios",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("cannot read config file {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cohort: PathBuf,
    /// Optional schema file; the built-in Kaggle column mapping otherwise.
    pub schema: Option<PathBuf>,
    pub seed: u64,
    pub n_runs: usize,
    pub n_chained_iterations: usize,
    pub bootstrap_n: usize,
    pub alpha: f64,
    pub out: PathBuf,
    pub workers: usize,
    pub tasks: Vec<Task>,
    pub families: Vec<Family>,
    pub ratios: [f64; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cohort: PathBuf::from("dataset.csv"),
            schema: None,
            seed: 0,
            n_runs: DEFAULT_RUNS,
            n_chained_iterations: DEFAULT_CHAINED_ITERATIONS,
            bootstrap_n: DEFAULT_BOOTSTRAP,
            alpha: 0.05,
            out: PathBuf::from("out"),
            workers: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            tasks: Task::ALL.to_vec(),
            families: Family::ALL.to_vec(),
            ratios: [0.5, 0.2, 0.3],
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| bad(key, e.to_string()))
}

/// Parses `all` or a comma/semicolon separated list.
fn parse_list<T: std::str::FromStr<Err = String> + Copy>(
    key: &str,
    v: &str,
    all: &[T],
) -> Result<Vec<T>, ConfigError> {
    if v.eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    let items: Vec<T> = v
        .split([',', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| bad(key, e)))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(bad(key, "empty list"));
    }
    Ok(items)
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "cohort" => self.cohort = PathBuf::from(v),
            "schema" => {
                self.schema = if v.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "n_runs" => self.n_runs = parse_num(key, v)?,
            "n_chained_iterations" => self.n_chained_iterations = parse_num(key, v)?,
            "bootstrap_n" => self.bootstrap_n = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "workers" => self.workers = parse_num(key, v)?,
            "tasks" | "task" => self.tasks = parse_list("tasks", v, &Task::ALL)?,
            "families" | "family" => self.families = parse_list("families", v, &Family::ALL)?,
            "ratios" => {
                let r: Vec<f64> = v
                    .split([',', ';'])
                    .map(|s| parse_num::<f64>(key, s.trim()))
                    .collect::<Result<_, _>>()?;
                self.ratios = r
                    .try_into()
                    .map_err(|_| bad(key, "expected three ratios"))?;
            }
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Resolve defaults ← file ← environment ← overrides.
    pub fn resolve(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        overrides: &[(&str, String)],
    ) -> Result<Self, ConfigError> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            cfg.apply_file_text(&text)?;
        }
        for key in KEYS {
            if let Some(v) = env(&format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())) {
                cfg.set(key, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_runs == 0 {
            return Err(bad("n_runs", "must be at least 1"));
        }
        if self.n_chained_iterations == 0 {
            return Err(bad("n_chained_iterations", "must be at least 1"));
        }
        if self.bootstrap_n == 0 {
            return Err(bad("bootstrap_n", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("alpha", "must lie in (0, 1)"));
        }
        if self.workers == 0 {
            return Err(bad("workers", "must be at least 1"));
        }
        if self.ratios.iter().any(|r| r.is_nan() || *r <= 0.0)
            || (self.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(bad("ratios", "must be positive and sum to 1"));
        }
        Ok(())
    }

    /// Settings that influence results; `out` and `workers` are left out so
    /// moving the output or changing parallelism keeps hashes stable.
    pub fn fingerprint(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": self.schema.as_ref().map(|p| p.display().to_string()),
            "seed": self.seed,
            "n_runs": self.n_runs,
            "n_chained_iterations": self.n_chained_iterations,
            "bootstrap_n": self.bootstrap_n,
            "alpha": self.alpha,
            "tasks": self.tasks,
            "families": self.families,
            "ratios": self.ratios,
        })
    }
}
