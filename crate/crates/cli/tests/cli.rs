use std::path::Path;
use std::process::{Command, Output};

fn clinpred(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinpred"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("CLINPRED_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn stages_run_separately_and_score_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&clinpred(
        &["synth", "--n", "1500", "--seed", "4", "-o", "cohort.csv"],
        d,
    ));
    std::fs::write(
        d.join("run.conf"),
        "cohort = cohort.csv\nn_runs = 1\nn_chained_iterations = 2\nbootstrap_n = 10\n",
    )
    .unwrap();
    let common = [
        "--config",
        "run.conf",
        "--task",
        "sars_cov_2",
        "--family",
        "lr,xgb",
        "--workers",
        "2",
    ];
    for stage in [
        "split",
        "preprocess",
        "search",
        "evaluate",
        "explain",
        "report",
    ] {
        let mut args = vec![stage];
        args.extend(common);
        ok(&clinpred(&args, d));
    }
    let table = std::fs::read_to_string(d.join("out/sars_cov_2/table.tsv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(d.join("out/manifest.json").exists());

    std::fs::write(
        d.join("record.json"),
        r#"{"schema_version": 1, "features": {"Hemoglobin": 0.3, "Influenza A": null}}"#,
    )
    .unwrap();
    let resp: serde_json::Value = serde_json::from_str(&ok(&clinpred(
        &[
            "score",
            "--manifest",
            "out/manifest.json",
            "--record",
            "record.json",
        ],
        d,
    )))
    .unwrap();
    let p = resp["results"]["sars_cov_2"]["probability"]
        .as_f64()
        .unwrap();
    assert!((0.0..=1.0).contains(&p));

    std::fs::write(
        d.join("bad.json"),
        r#"{"schema_version": 1, "features": {"Eye colour": "blue"}}"#,
    )
    .unwrap();
    let out = clinpred(
        &[
            "score",
            "--manifest",
            "out/manifest.json",
            "--record",
            "bad.json",
        ],
        d,
    );
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(err["key"], "Eye colour");
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = clinpred(&["split", "--task", "mortality"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mortality"));
}

#[test]
fn serve_refuses_missing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = clinpred(
        &[
            "serve",
            "--manifest",
            "nowhere/manifest.json",
            "--bind",
            "127.0.0.1:0",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("refusing to start"));
}
