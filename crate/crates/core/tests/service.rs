mod common;

use std::io::{Read, Write};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use clinpred::runner::manifest::sha256_hex;
use clinpred::service::{self, ServiceError, ServiceState, WIRE_SCHEMA_VERSION};
use clinpred::{ModelArtifact, Task};
use serde_json::{json, Value};
use tower::ServiceExt;

fn state() -> Arc<ServiceState> {
    static STATE: std::sync::OnceLock<Arc<ServiceState>> = std::sync::OnceLock::new();
    STATE
        .get_or_init(|| {
            Arc::new(ServiceState::from_manifest(&common::fixture().manifest_path()).unwrap())
        })
        .clone()
}

async fn call(method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = service::router(state()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn test_fold_record_matches_batch_prediction() {
    let fx = common::fixture();
    for task in Task::ALL {
        let artifact =
            ModelArtifact::load(&fx.cfg.out.join(&fx.manifest.headline[&task].artifact)).unwrap();
        let rows = fx.test_rows(task);
        let batch = artifact
            .predict(&artifact.preprocessor.apply(&rows).unwrap())
            .unwrap();
        for row in [0, rows.n_rows() / 2, rows.n_rows() - 1] {
            let body = json!({
                "schema_version": WIRE_SCHEMA_VERSION,
                "features": common::record_json(&rows, row),
                "tasks": [task.as_str()],
            });
            let (status, resp) = call("POST", "/score", Some(body)).await;
            assert_eq!(status, StatusCode::OK, "{resp}");
            let p = resp["results"][task.as_str()]["probability"]
                .as_f64()
                .unwrap();
            assert_eq!(p.to_bits(), batch[row].to_bits(), "{task} row {row}");
        }
    }
}

#[tokio::test]
async fn response_invariants_hold() {
    let rows = common::fixture().test_rows(Task::Icu);
    let body = json!({ "schema_version": 1, "features": common::record_json(&rows, 0) });
    let (status, resp) = call("POST", "/score", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let results = resp["results"].as_object().unwrap();
    assert_eq!(results.len(), 3);
    for (task, r) in results {
        let p = r["probability"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        let thr = r["operating_threshold"].as_f64().unwrap();
        assert_eq!(r["triage_flag"].as_bool().unwrap(), p >= thr);
        let attrs = r["attributions"].as_array().unwrap();
        assert!(attrs.len() <= 10);
        if !attrs.is_empty() {
            let total: f64 = attrs
                .iter()
                .map(|a| a["delta"].as_f64().unwrap().abs())
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "{task}: {total}");
        }
        assert_eq!(resp["model_versions"][task].as_str().unwrap().len(), 64);
    }
    assert!(resp["attribution_method"]
        .as_str()
        .unwrap()
        .contains("masked"));
}

#[tokio::test]
async fn unknown_feature_is_rejected_by_name() {
    let body = json!({ "schema_version": 1, "features": { "Shoe size": 42 }, "tasks": ["icu"] });
    let (status, resp) = call("POST", "/score", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(resp["status"], "invalid input");
    assert_eq!(resp["key"], "Shoe size");
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let cases = [
        (json!({ "features": {} }), "schema_version"),
        (json!({ "schema_version": 1, "tasks": [] }), "tasks"),
        (
            json!({ "schema_version": 1, "tasks": ["mortality"] }),
            "mortality",
        ),
        (
            json!({ "schema_version": 1, "features": { "Hemoglobin": "high" } }),
            "Hemoglobin",
        ),
        (
            json!({ "schema_version": 1, "features": { "Influenza A": 1.0 } }),
            "Influenza A",
        ),
        (
            json!({ "schema_version": 1, "features": { "Influenza A": "" } }),
            "Influenza A",
        ),
    ];
    for (body, key) in cases {
        let (status, resp) = call("POST", "/score", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(resp["key"], key, "{body}");
    }
}

#[tokio::test]
async fn empty_record_is_scored_and_flagged() {
    let (status, resp) = call(
        "POST",
        "/score",
        Some(json!({ "schema_version": 1, "features": {} })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    for r in resp["results"].as_object().unwrap().values() {
        assert!(r["probability"].as_f64().unwrap().is_finite());
        assert_eq!(r["degenerate"], true);
    }
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let rows = common::fixture().test_rows(Task::SarsCov2);
    let body = json!({ "schema_version": 1, "features": common::record_json(&rows, 1) });
    let handles: Vec<_> = (0..16)
        .map(|_| tokio::spawn(call("POST", "/score", Some(body.clone()))))
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap().1.to_string());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn schema_lists_every_input_field() {
    let (status, resp) = call("GET", "/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    let features = resp["features"].as_array().unwrap();
    let artifact = &state().models[&Task::SarsCov2].artifact;
    assert_eq!(features.len(), artifact.preprocessor.source_columns.len());
    let flu = features
        .iter()
        .find(|f| f["name"] == "Influenza A")
        .unwrap();
    assert_eq!(flu["kind"], "categorical");
    assert!(!flu["categories"].as_array().unwrap().is_empty());
    let hb = features.iter().find(|f| f["name"] == "Hemoglobin").unwrap();
    assert_eq!(hb["kind"], "numeric");
}

#[tokio::test]
async fn health_reports_artifact_hashes() {
    let fx = common::fixture();
    let (status, resp) = call("GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["status"], "ok");
    for (task, h) in &fx.manifest.headline {
        let bytes = std::fs::read(fx.cfg.out.join(&h.artifact)).unwrap();
        assert_eq!(resp["models"][task.as_str()]["sha256"], sha256_hex(&bytes));
    }
    assert!(resp["uptime_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn plain_http_over_a_socket() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    let app = service::router(state());
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });

    let body =
        json!({ "schema_version": 1, "features": { "Hemoglobin": null }, "tasks": ["admission"] })
            .to_string();
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "POST /score HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut text = String::new();
    stream.read_to_string(&mut text).unwrap();
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    let json_start = text.find("\r\n\r\n").unwrap() + 4;
    let resp: Value = serde_json::from_str(&text[json_start..]).unwrap();
    assert!(resp["results"]["admission"]["probability"].is_number());
}

#[test]
fn tampered_artifact_refuses_to_start() {
    let fx = common::fixture();
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("out");
    copy_dir(&fx.cfg.out, &copy);
    let rel = &fx.manifest.headline[&Task::Icu].artifact;
    let mut a = ModelArtifact::load(&copy.join(rel)).unwrap();
    a.operating_threshold += 0.01;
    a.save(&copy.join(rel)).unwrap();
    match ServiceState::from_manifest(&copy.join("manifest.json")) {
        Err(ServiceError::HashMismatch { task, .. }) => assert_eq!(task, Task::Icu),
        other => panic!("expected hash mismatch, got {:?}", other.err()),
    }
    std::fs::remove_file(copy.join(rel)).unwrap();
    assert!(matches!(
        ServiceState::from_manifest(&copy.join("manifest.json")),
        Err(ServiceError::Artifact { .. })
    ));
}

fn copy_dir(from: &std::path::Path, to: &std::path::Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        let target = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &target);
        } else {
            std::fs::copy(&p, &target).unwrap();
        }
    }
}
