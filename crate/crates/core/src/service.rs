//! HTTP scoring service over the headline models of a finished run.
//!
//! Endpoints:
//!
//! * `POST /score` with `{"schema_version": 1, "features": {...}, "tasks": [...]}`.
//!   `null` or an absent key means the value is missing. `tasks` defaults to
//!   every loaded task.
//! * `GET /schema` lists the raw input fields, their kinds and known categories.
//! * `GET /health` reports model hashes and uptime.
//!
//! Invalid requests get status 400 with
//! `{"status": "invalid input", "error": ..., "key": ...}`.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};

use crate::data::{ColumnKind, Task};
use crate::explain::TOP_K;
use crate::models::{Family, ModelArtifact};
use crate::runner::manifest::{self, RunManifest};
use crate::runner::score::{self, Attribution, RawValue};

pub const WIRE_SCHEMA_VERSION: u32 = 1;

pub const ATTRIBUTION_METHOD: &str = "Per-record change in predicted probability when each model input is set to 0 \
(training mean for standardized values, off for indicator columns): score minus masked score, scaled so \
absolute values sum to 1 over the listed features. Label-free; not the test-set loss importance reported \
by the batch pipeline.";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot read manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("manifest lists no headline models")]
    NoModels,
    #[error("{task} artifact {path}: {message}")]
    Artifact {
        task: Task,
        path: String,
        message: String,
    },
    #[error("{task} artifact {path} does not match the hash recorded in the manifest")]
    HashMismatch { task: Task, path: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub struct LoadedModel {
    pub artifact: ModelArtifact,
    pub sha256: String,
    pub path: PathBuf,
}

/// Immutable state shared by all request handlers.
pub struct ServiceState {
    pub models: BTreeMap<Task, LoadedModel>,
    started: Instant,
}

impl ServiceState {
    pub fn new(models: BTreeMap<Task, LoadedModel>) -> Result<Self, ServiceError> {
        if models.is_empty() {
            return Err(ServiceError::NoModels);
        }
        Ok(ServiceState {
            models,
            started: Instant::now(),
        })
    }

    /// Loads every headline artifact named in the manifest, relative to the
    /// manifest's directory, and checks each against its recorded hash.
    pub fn from_manifest(path: &Path) -> Result<Self, ServiceError> {
        let manifest: RunManifest =
            crate::runner::load_manifest(path).map_err(|message| ServiceError::Manifest {
                path: path.display().to_string(),
                message,
            })?;
        let root = path.parent().unwrap_or(Path::new("."));
        let mut models = BTreeMap::new();
        for (task, rel) in manifest.headline_artifacts() {
            let full = root.join(rel);
            let bytes = std::fs::read(&full).map_err(|e| ServiceError::Artifact {
                task,
                path: rel.to_string(),
                message: e.to_string(),
            })?;
            let sha256 = manifest::sha256_hex(&bytes);
            if manifest.files.get(rel).is_some_and(|h| *h != sha256) {
                return Err(ServiceError::HashMismatch {
                    task,
                    path: rel.to_string(),
                });
            }
            let artifact =
                ModelArtifact::from_json(&String::from_utf8_lossy(&bytes)).map_err(|e| {
                    ServiceError::Artifact {
                        task,
                        path: rel.to_string(),
                        message: e.to_string(),
                    }
                })?;
            models.insert(
                task,
                LoadedModel {
                    artifact,
                    sha256,
                    path: full,
                },
            );
        }
        ServiceState::new(models)
    }

    pub fn uptime_s(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn knows(&self, key: &str) -> bool {
        self.models.values().any(|m| {
            m.artifact
                .preprocessor
                .source_columns
                .iter()
                .any(|c| c.name == key)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvalidInput {
    pub status: &'static str,
    pub error: String,
    pub key: Option<String>,
}

fn invalid(error: impl Into<String>, key: Option<&str>) -> InvalidInput {
    InvalidInput {
        status: "invalid input",
        error: error.into(),
        key: key.map(str::to_string),
    }
}

impl IntoResponse for InvalidInput {
    fn into_response(self) -> Response {
        (StatusCode::BAD_REQUEST, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskScore {
    pub family: Family,
    pub probability: f64,
    pub operating_threshold: f64,
    pub triage_flag: bool,
    pub attributions: Vec<Attribution>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreResponse {
    pub schema_version: u32,
    pub results: BTreeMap<Task, TaskScore>,
    pub model_versions: BTreeMap<Task, String>,
    pub attribution_method: &'static str,
}

/// Validates and scores one request body. Shared by the HTTP handler and the
/// command-line `score` path.
pub fn score_body(state: &ServiceState, body: &[u8]) -> Result<ScoreResponse, InvalidInput> {
    let req: Value =
        serde_json::from_slice(body).map_err(|e| invalid(format!("malformed JSON: {e}"), None))?;
    let obj = req
        .as_object()
        .ok_or_else(|| invalid("request must be a JSON object", None))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "schema_version" | "features" | "tasks") {
            return Err(invalid(format!("unknown request field `{key}`"), Some(key)));
        }
    }
    match obj.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(WIRE_SCHEMA_VERSION) => {}
        _ => {
            return Err(invalid(
                format!("schema_version must be {WIRE_SCHEMA_VERSION}"),
                Some("schema_version"),
            ))
        }
    }
    let features = match obj.get("features") {
        None | Some(Value::Null) => serde_json::Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(invalid("features must be an object", Some("features"))),
    };
    let tasks: Vec<Task> = match obj.get("tasks") {
        None | Some(Value::Null) => state.models.keys().copied().collect(),
        Some(Value::Array(items)) => {
            let mut out = BTreeSet::new();
            for item in items {
                let name = item
                    .as_str()
                    .ok_or_else(|| invalid("tasks must be strings", Some("tasks")))?;
                let task: Task = name.parse().map_err(|e: String| invalid(e, Some(name)))?;
                if !state.models.contains_key(&task) {
                    return Err(invalid(
                        format!("no model loaded for task {task}"),
                        Some(name),
                    ));
                }
                out.insert(task);
            }
            out.into_iter().collect()
        }
        Some(_) => return Err(invalid("tasks must be an array", Some("tasks"))),
    };
    if tasks.is_empty() {
        return Err(invalid("at least one task is required", Some("tasks")));
    }
    for key in features.keys() {
        if !state.knows(key) {
            return Err(invalid(format!("unknown feature `{key}`"), Some(key)));
        }
    }

    let mut results = BTreeMap::new();
    let mut model_versions = BTreeMap::new();
    for task in tasks {
        let m = &state.models[&task];
        let record: BTreeMap<String, RawValue> = features
            .iter()
            .filter(|(k, _)| {
                m.artifact
                    .preprocessor
                    .source_columns
                    .iter()
                    .any(|c| &c.name == *k)
            })
            .map(|(k, v)| (k.clone(), RawValue::from(v)))
            .collect();
        let s = score::score_record(&m.artifact, &record)
            .map_err(|e| invalid(e.to_string(), e.key()))?;
        let degenerate = s.degenerate || features.values().all(Value::is_null);
        results.insert(
            task,
            TaskScore {
                family: m.artifact.family,
                probability: s.probability,
                operating_threshold: m.artifact.operating_threshold,
                triage_flag: s.probability >= m.artifact.operating_threshold,
                attributions: score::top_attributions(&s.attributions, TOP_K),
                degenerate,
            },
        );
        model_versions.insert(task, m.sha256.clone());
    }
    Ok(ScoreResponse {
        schema_version: WIRE_SCHEMA_VERSION,
        results,
        model_versions,
        attribution_method: ATTRIBUTION_METHOD,
    })
}

/// Body of `GET /schema`: the union of raw input fields over loaded models.
pub fn schema_body(state: &ServiceState) -> Value {
    let mut fields: BTreeMap<String, (ColumnKind, BTreeSet<String>, Vec<Task>)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (task, m) in &state.models {
        let pre = &m.artifact.preprocessor;
        for c in &pre.source_columns {
            let entry = fields.entry(c.name.clone()).or_insert_with(|| {
                order.push(c.name.clone());
                (c.kind, BTreeSet::new(), Vec::new())
            });
            entry.2.push(*task);
            if c.kind == ColumnKind::Categorical {
                if let Some(enc) = pre.discrete.iter().find(|d| d.column == c.name) {
                    entry.1.extend(enc.categories.iter().cloned());
                }
            }
        }
    }
    let list: Vec<Value> = order
        .iter()
        .map(|name| {
            let (kind, cats, tasks) = &fields[name];
            let kind = match kind {
                ColumnKind::Numeric => "numeric",
                ColumnKind::Categorical => "categorical",
            };
            json!({
                "name": name,
                "kind": kind,
                "categories": cats,
                "units": Value::Null,
                "tasks": tasks,
            })
        })
        .collect();
    json!({ "schema_version": WIRE_SCHEMA_VERSION, "features": list })
}

pub fn health_body(state: &ServiceState) -> Value {
    let models: BTreeMap<Task, Value> = state
        .models
        .iter()
        .map(|(t, m)| {
            (
                *t,
                json!({ "family": m.artifact.family, "sha256": m.sha256 }),
            )
        })
        .collect();
    json!({ "status": "ok", "models": models, "uptime_s": state.uptime_s() })
}

async fn score_handler(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    match score_body(&state, &body) {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn schema_handler(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    Json(schema_body(&state))
}

async fn health_handler(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    Json(health_body(&state))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/score", post(score_handler))
        .route("/schema", get(schema_handler))
        .route("/health", get(health_handler))
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
