use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use starnet::network::NetworkConfig;
use starnet::optimizer::worst_case_objective;
use tempfile::TempDir;

const OPERATING_POINT: &str = r#"{
  "theta_degrees": 45,
  "branches": [
    [{"eta_z": 0.8, "eta_x": 0.8}, {"eta_z": 1.0, "eta_x": 1.0}],
    [{"eta_z": 0.8, "eta_x": 0.8}, {"eta_z": 1.0, "eta_x": 1.0}],
    [{"eta_z": 0.8, "eta_x": 0.8}, {"eta_z": 1.0, "eta_x": 1.0}]
  ],
  "sources": [{"visibility": 1.0}, {"visibility": 1.0}, {"visibility": 1.0}]
}"#;

fn starnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starnet"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data rows of a CSV file with `# ` header lines, keyed by column name.
fn rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().map(String::from).zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

#[test]
fn evaluate_lists_every_selection() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "op.json", OPERATING_POINT);
    let out = dir.path().join("eval.csv");
    let o = starnet(&["evaluate", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# command: evaluate\n"));
    assert!(text.contains("# timestamp: 2023-11-14T22:13:20Z"));
    let table = rows(&text);
    assert_eq!(table.len(), 20);
    for r in &table {
        assert_eq!(r["S_closed_form"], "1.13137084990");
        assert!(r["difference"].parse::<f64>().unwrap().abs() < 1e-10);
    }
    let chsh = rows(&fs::read_to_string(dir.path().join("eval.chsh.csv")).unwrap());
    assert_eq!(chsh.len(), 3);
    assert_eq!(chsh[0]["chsh1"], "2.26274169980");
    assert!(chsh[0]["margin"].parse::<f64>().unwrap() > 0.2);
}

#[test]
fn json_output_is_one_document() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "op.json", OPERATING_POINT);
    let o = starnet(&["evaluate", s(&cfg), "--format", "json"]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["manifest"]["command"], "evaluate");
    assert_eq!(doc["selections"].as_array().unwrap().len(), 20);
    assert_eq!(doc["chsh"].as_array().unwrap().len(), 3);
}

#[test]
fn unreadable_config_exits_2_with_location() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", r#"{"theta_degrees": 45, "branches": [[{"eta_z": "high"}]]}"#);
    let o = starnet(&["evaluate", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("branches[0][0].eta_z"), "{err}");

    let o = starnet(&["evaluate", s(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_3() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", &OPERATING_POINT.replacen("0.8", "1.3", 1));
    let o = starnet(&["evaluate", s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eta_z"));
}

#[test]
fn zero_shots_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "op.json", OPERATING_POINT);
    assert_eq!(starnet(&["sample", s(&cfg), "--shots", "0"]).status.code(), Some(3));
}

#[test]
fn sample_reports_selections_pairs_and_chsh() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "op.json", OPERATING_POINT);
    let out = dir.path().join("s.csv");
    let log = dir.path().join("runs.csv");
    let o = starnet(&[
        "sample", s(&cfg), "--shots", "20000", "--seed", "3", "--bootstrap", "50", "--output", s(&out), "--log", s(&log),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = rows(&fs::read_to_string(&out).unwrap());
    assert_eq!(table.len(), 20);
    assert!(table.iter().all(|r| r["std_error"].parse::<f64>().unwrap() > 0.0));
    assert_eq!(rows(&fs::read_to_string(dir.path().join("s.chsh.csv")).unwrap()).len(), 3);
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 20001);
}

#[test]
fn tradeoff_curves() {
    let o = starnet(&["tradeoff", "--points", "5"]);
    assert!(o.status.success());
    let table = rows(&String::from_utf8(o.stdout).unwrap());
    let curve = |name: &str| table.iter().filter(|r| r["curve"] == name).collect::<Vec<_>>();
    let proj = curve("projective");
    assert_eq!(proj.len(), 5);
    let num = |r: &std::collections::HashMap<String, String>, c: &str| r[c].parse::<f64>().unwrap();
    assert_eq!(num(proj[0], "chsh1"), 2.0);
    assert!((num(proj[0], "chsh2") - (10f64.sqrt() - 1.0)).abs() < 1e-10);
    assert!((num(proj[4], "chsh1") - (2.0 * 10f64.sqrt() - 4.0)).abs() < 1e-10);
    assert!((num(proj[4], "chsh2") - 2.0).abs() < 1e-10);
    let sharp = curve("unsharp")[4];
    assert!((num(sharp, "chsh1") - 2.0 * 2f64.sqrt()).abs() < 1e-10);
    assert!((num(sharp, "chsh2") - 2f64.sqrt()).abs() < 1e-10);
    assert_eq!(starnet(&["tradeoff", "--points", "1"]).status.code(), Some(3));
}

#[test]
fn optimize_writes_a_runnable_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("opt.csv");
    let o = starnet(&[
        "optimize", "--m", "3", "--n", "2", "--symmetry", "per-depth", "--budget", "4", "--output", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fields: std::collections::HashMap<_, _> = rows(&fs::read_to_string(&out).unwrap())
        .into_iter()
        .map(|r| (r["field"].clone(), r["value"].clone()))
        .collect();
    assert!((fields["objective"].parse::<f64>().unwrap() - 0.8 * 2f64.sqrt()).abs() < 1e-6);
    assert!((fields["theta_degrees"].parse::<f64>().unwrap() - 45.0).abs() < 0.01);
    assert!(dir.path().join("opt.trace.csv").exists());

    let cfg = dir.path().join("opt.config.json");
    let config = NetworkConfig::from_json_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    assert!((worst_case_objective(&config) - 0.8 * 2f64.sqrt()).abs() < 1e-6);
    assert!(starnet(&["evaluate", s(&cfg)]).status.success());
}

#[test]
fn thread_count_leaves_output_bytes_unchanged() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "op.json", OPERATING_POINT);
    let run = |threads: &str| {
        let o = starnet(&["sample", s(&cfg), "--shots", "50000", "--seed", "9", "--bootstrap", "100", "--threads", threads]);
        assert!(o.status.success());
        o.stdout
    };
    assert_eq!(run("1"), run("4"));
}
