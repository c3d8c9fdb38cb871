use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn exguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exguard")).args(args).env_remove("RUST_LOG").output().unwrap()
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/corpus")
}

fn bundled_cee() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/cee.json").display().to_string()
}

/// Copy the `.java` files of the bundled corpus into `dir`.
fn copy_sources(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(corpus()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "java") {
            let dest = dir.join(p.file_name().unwrap());
            std::fs::copy(&p, &dest).unwrap();
            out.push(dest);
        }
    }
    out.sort();
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn analyze_leaves_inputs_untouched_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir(&src).unwrap();
    let files = copy_sources(&src);
    let before: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    let mut reports = Vec::new();
    for k in ["1", "4", "8", "8"] {
        let out_dir = dir.path().join(format!("out{k}"));
        let o = exguard(&["analyze", src.to_str().unwrap(), "--workers", k, "--output", out_dir.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(json(&o)["summary"]["files"], 10);
        reports.push(std::fs::read(out_dir.join("report.json")).unwrap());
        assert!(out_dir.join("timings.json").exists());
        assert!(out_dir.join("patched/ConfigLoader.java").exists());
    }
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
    let after: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn evaluate_bundled_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = exguard(&["evaluate", corpus().to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    for key in ["cov", "cov_p", "acc", "crs"] {
        assert_eq!(r[key], 100.0, "{key}");
    }
    let o = exguard(&["evaluate", corpus().to_str().unwrap(), "--output", out.to_str().unwrap(), "--format", "table"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("TOTAL"));
}

#[test]
fn evaluate_without_sidecars_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    copy_sources(dir.path());
    let o = exguard(&["evaluate", dir.path().to_str().unwrap(), "--output", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing sidecars"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(exguard(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(exguard(&["bench", "--latency", "1", "--branches", "2", "--k", "0"]).status.code(), Some(1));
    assert_eq!(exguard(&["analyze", d.join("missing").to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(d.join("Broken.java"), "class Broken {\n    void f() {\n").unwrap();
    let o = exguard(&["analyze", d.join("Broken.java").to_str().unwrap(), "--output", d.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "wrokers = 3\n").unwrap();
    let o = exguard(&["analyze", corpus().to_str().unwrap(), "--config", d.join("bad.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(d.join("zero.toml"), "workers = 0\n").unwrap();
    let o = exguard(&["analyze", corpus().to_str().unwrap(), "--config", d.join("zero.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn live_backend_failure_exits_3_without_leaking_the_credential() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("A.java"), "class A {\n    void f(String p) {\n        new FileReader(p);\n    }\n}\n").unwrap();
    std::fs::write(
        d.join("live.toml"),
        "[backend]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nmax_retries = 0\ntimeout_secs = 2.0\nbackoff_base_ms = 1\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_exguard"))
        .args(["-vv", "analyze", d.join("A.java").to_str().unwrap(), "--live"])
        .args(["--config", d.join("live.toml").to_str().unwrap(), "--output", d.join("o").to_str().unwrap()])
        .env("EXGUARD_API_KEY", "sk-test-do-not-print-4921")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    for stream in [&o.stdout, &o.stderr] {
        assert!(!String::from_utf8_lossy(stream).contains("do-not-print"));
    }
}

#[test]
fn cee_subcommands() {
    let o = exguard(&["cee", "stats", &bundled_cee()]);
    let s = json(&o);
    assert!(s["nodes"].as_u64().unwrap() >= 30);
    assert!(s["branches"].as_u64().unwrap() >= 8);
    let o = exguard(&["cee", "validate", &bundled_cee()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["valid"], true);
    let o = exguard(&["cee", "keywords", &bundled_cee()]);
    assert_eq!(json(&o)["FileReader"][0], "IOException");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name": "Exception", "children": []}"#).unwrap();
    let o = exguard(&["cee", "validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(json(&o)["valid"], false);
    std::fs::write(&bad, "{").unwrap();
    assert_eq!(exguard(&["cee", "validate", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn rag_verify_writes_labels_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let samples = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/samples.json");
    let out = dir.path().join("rag");
    let o = exguard(&["rag-verify", &bundled_cee(), samples.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["verification"]["refinements"], 0);
    let labels: Value = serde_json::from_slice(&std::fs::read(out.join("labels.json")).unwrap()).unwrap();
    assert_eq!(labels.as_array().unwrap().len(), 11);
    assert!(out.join("verification.json").exists());
}

#[test]
fn bench_reports_speedup() {
    let o = exguard(&["bench", "--latency", "20", "--branches", "6", "--k", "6"]);
    let r = json(&o);
    assert_eq!(r["calls"], 6);
    assert!(r["parallel_ms"].as_f64().unwrap() < r["sequential_ms"].as_f64().unwrap());
}
