use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(rel)
        .canonicalize()
        .unwrap()
}

/// Copy of the banking config with absolute data paths and the audit log
/// inside `dir`.
fn temp_config(dir: &Path) -> PathBuf {
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(data("banking_faq/config.json")).unwrap()).unwrap();
    cfg["catalog_path"] = json!(data("banking_faq/catalog.jsonl"));
    cfg["training_path"] = json!(data("banking_faq/training.jsonl"));
    cfg["audit_path"] = json!(dir.join("audit/audit.jsonl"));
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn annotator(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annotator"))
        .args(args)
        .env_remove("ANNOTATOR_API_BASE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn missing_config_is_usage_error() {
    let o = annotator(&["annotate", "--utterance", "lost deb"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
    assert_eq!(annotator(&["--help"]).status.code(), Some(0));
    assert_eq!(annotator(&["annotate", "--bogus"]).status.code(), Some(1));
}

#[test]
fn annotate_prints_top_five_with_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let o = annotator(&["annotate", "--config", cfg.to_str().unwrap(), "--utterance", "lost deb"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("MEDIUM") || out.contains("HIGH") || out.contains("LOW"));
    let first_row = out.lines().nth(2).unwrap();
    assert!(first_row.contains("Lock and unlock your credit and debit cards"), "{out}");
    assert!(dir.path().join("audit/audit.jsonl").exists());
}

#[test]
fn annotate_json_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let args = ["annotate", "--config", cfg.to_str().unwrap(), "--utterance", "lost deb", "--seed", "7", "--json"];
    let a = annotator(&args);
    let b = annotator(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/annotate_lost_deb.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &a.stdout).unwrap();
    }
    assert_eq!(stdout(&a), std::fs::read_to_string(&golden).unwrap());
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["top"][0]["annotation_id"], "0002");
}

#[test]
fn empty_utterance_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let o = annotator(&["annotate", "--config", cfg.to_str().unwrap(), "--utterance", "  "]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_config_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"annotation_type":"FAQ","primary_column":"question","confidence_thresholds":{"high":50,"medium":60}}"#).unwrap();
    let o = annotator(&["ingest", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("confidence_thresholds"));
    let o = annotator(&["ingest", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn http_provider_without_endpoint_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let o = annotator(&["annotate", "--config", cfg.to_str().unwrap(), "--utterance", "x", "--provider", "http"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unreachable_backend_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_annotator"))
        .args(["annotate", "--config", cfg.to_str().unwrap(), "--utterance", "x", "--provider", "http"])
        .env("ANNOTATOR_API_BASE", "http://127.0.0.1:9")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn evaluate_reports_table_and_significance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let gold = data("banking_faq/gold.jsonl");
    let report = dir.path().join("report.json");
    let o = annotator(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        gold.to_str().unwrap(),
        "--variants",
        "full,no_judge,single",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("variant"));
    assert!(out.contains("\"statistic\": \"reciprocal_rank\""));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["significance"]["comparisons"], 3);
    assert_eq!(v["variants"].as_array().unwrap().len(), 3);

    let bad = annotator(&["evaluate", "--config", cfg.to_str().unwrap(), "--dataset", gold.to_str().unwrap(), "--variants", "full,best"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn batch_writes_one_line_per_item() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let out_dir = dir.path().join("out");
    let o = annotator(&[
        "batch",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data("banking_faq/utterances.jsonl").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "complete");
    let n = v["total_items"].as_u64().unwrap() as usize;
    let lines = std::fs::read_to_string(out_dir.join("job-000001.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), n);
}

#[test]
fn ingest_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let o = annotator(&["ingest", "--config", cfg.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["entries"], 40);
    assert_eq!(v["training_examples"], 30);

    let idx = dir.path().join("idx");
    let o = annotator(&["index", "--config", cfg.to_str().unwrap(), "--out", idx.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["indices"].as_array().unwrap().len(), 2);
    assert!(idx.join("index_primary_only_256.jsonl").exists());
    assert!(idx.join("index_full_context_256.jsonl").exists());
}

#[test]
fn purge_audit_archives_old_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let audit = dir.path().join("audit/audit.jsonl");
    std::fs::create_dir_all(audit.parent().unwrap()).unwrap();
    let old = json!({
        "record_id": 1,
        "timestamp_ms": 0,
        "query_hash": "00",
        "masked_utterance": "x",
        "pii_matches": 0,
        "result_summary": null,
        "agent_statuses": {}
    });
    std::fs::write(&audit, format!("{old}\n")).unwrap();
    let o = annotator(&["purge-audit", "--config", cfg.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["purged"], 1);
    assert_eq!(std::fs::read_to_string(&audit).unwrap(), "");
    assert!(std::fs::read_to_string(dir.path().join("audit/audit.jsonl.cold")).unwrap().contains("\"record_id\":1"));
}
