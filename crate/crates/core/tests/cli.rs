mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::quick_run;
use feddt::harness::{
    COMPARISON_FILE, CORPUS_FILE, MANIFEST_FILE, METRICS_FILE, METRICS_HEADER, SUMMARY_FILE,
    WEIGHTS_FILE,
};

fn feddt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feddt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "quick.toml", &quick_run().to_toml_string());
    let outs: Vec<_> = ["one", "two"].iter().map(|d| tmp.path().join(d)).collect();
    for out in &outs {
        let o = feddt(&["run", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("final depth 4"), "{}", stdout(&o));
    }
    for f in [METRICS_FILE, SUMMARY_FILE, WEIGHTS_FILE, CORPUS_FILE] {
        let a = fs::read(outs[0].join(f)).unwrap();
        let b = fs::read(outs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    let csv = fs::read_to_string(outs[0].join(METRICS_FILE)).unwrap();
    assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
    assert_eq!(csv.lines().count(), 13);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(outs[0].join(MANIFEST_FILE)).unwrap()).unwrap();
    assert!(manifest.to_string().contains(WEIGHTS_FILE));
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let o = feddt(&[
        "run",
        "/no/such/config.toml",
        "--out",
        "/tmp/unused-feddt-out",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("/no/such/config.toml"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unknown_key_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[federated]\nroundz = 12\n");
    let o = feddt(&["run", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("roundz"), "{}", stderr(&o));
    assert!(stderr(&o).contains("bad.toml"), "{}", stderr(&o));
}

#[test]
fn bad_usage_exits_2() {
    assert_eq!(feddt(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(feddt(&["cost", "--T", "120"]).status.code(), Some(2));
}

#[test]
fn cost_prints_both_totals() {
    let args = [
        "cost", "--T", "120", "--c", "6", "--N", "6", "--W1", "1", "--W2", "1",
    ];
    let o = feddt(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("840") && text.contains("140"), "{text}");
    let mut json_args = args.to_vec();
    json_args.push("--json");
    let v: serde_json::Value = serde_json::from_str(&stdout(&feddt(&json_args))).unwrap();
    assert_eq!(v["fedt_total"], 1440);
    assert_eq!(v["feddt_series_total"], 840);
    assert!(v["note"].as_str().unwrap().contains("140"));
    let o = feddt(&[
        "cost", "--T", "100", "--c", "6", "--N", "6", "--W1", "1", "--W2", "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_a_fault() {
    let o = feddt(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = feddt(&["gradcheck", "--inject-fault", "softmax", "--json"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["failing_op"], "softmax");
    assert_eq!(v["passed"], false);
}

#[test]
fn compare_identical_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = quick_run().to_toml_string();
    let a = write_config(tmp.path(), "a.toml", &text);
    let b = write_config(tmp.path(), "b.toml", &text);
    let out = tmp.path().join("cmp");
    let o = feddt(&[
        "compare",
        &a,
        &b,
        "--seeds",
        "4,5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join(COMPARISON_FILE)).unwrap()).unwrap();
    assert_eq!(v["final_loss_ratio_b_over_a"], 1.0);
    assert_eq!(v["block_byte_ratio_value"], 1.0);
    assert!(out.join("b/seed-5").join(METRICS_FILE).exists());
}
