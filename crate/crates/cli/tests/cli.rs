use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mlgc::eval::{train_eval_pipeline, EvalConfig, TrainingData};
use mlgc::io::{load_dataset, load_synthetic, parse_trace_csv};
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_mlgc");

fn mlgc(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = mlgc(args);
    assert!(out.status.success(), "mlgc {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dataset(root: &Path, nodes: &str) -> std::path::PathBuf {
    let data = root.join("data");
    ok(&["make-data", "--out", p(&data), "--nodes", nodes, "--classes", "3"]);
    data
}

const QUICK: [&str; 8] = ["--outer", "1", "--inner", "4", "--tau1", "2", "--hidden", "8"];

fn condense(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["condense", "--data", p(data), "--out", p(out)];
    args.extend_from_slice(&QUICK);
    args.extend_from_slice(extra);
    mlgc(&args)
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "60");
    let out = dir.path().join("out");
    assert_eq!(condense(&data, &out, &["--crate", "0"]).status.code(), Some(2));
    assert_eq!(condense(&data, &out, &["--profile", "paper-best", "--init", "random"]).status.code(), Some(2));
    assert_eq!(condense(&data, &out, &["--init", "prob", "--method", "gcdm", "--delta", "1.5"]).status.code(), Some(2));
    assert_eq!(condense(&dir.path().join("missing"), &out, &[]).status.code(), Some(3));
    fs::write(data.join("labels.tsv"), "not a number\n").unwrap();
    assert_eq!(condense(&data, &out, &[]).status.code(), Some(3));
    assert_eq!(mlgc(&["condense", "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "60");
    let out = dir.path().join("out");
    assert!(condense(&data, &out, &[]).status.success());
    let again = condense(&data, &out, &[]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert!(condense(&data, &out, &["--force"]).status.success());
    assert_eq!(mlgc(&["make-data", "--out", p(&data)]).status.code(), Some(2));
}

#[test]
fn condense_writes_synthetic_trace_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "90");
    let out = dir.path().join("out");
    assert!(condense(&data, &out, &["--crate", "0.2"]).status.success());
    let synthetic = load_synthetic(&out.join("synthetic")).unwrap();
    assert_eq!(synthetic.n_prime(), 18);
    assert!(synthetic.adjacency().is_some());
    let trace = parse_trace_csv(&fs::read_to_string(out.join("trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.len(), 4);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["command"], "condense");
    assert_eq!(manifest["config"]["c_rate"], 0.2);
    let trace_hash = hex::encode(Sha256::digest(fs::read(out.join("trace.csv")).unwrap()));
    assert_eq!(manifest["outputs"]["trace.csv"], trace_hash.as_str());
}

#[test]
fn manifest_arguments_replay_to_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "60");
    let first = dir.path().join("first");
    assert!(condense(&data, &first, &["--method", "sgdd", "--seed", "3"]).status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(first.join("manifest.json")).unwrap()).unwrap();

    let second = dir.path().join("second");
    let mut args: Vec<String> =
        manifest["args"].as_array().unwrap().iter().skip(1).map(|v| v.as_str().unwrap().to_string()).collect();
    let out_at = args.iter().position(|a| a == "--out").unwrap();
    args[out_at + 1] = p(&second).to_string();
    let replay = Command::new(BIN).args(&args).output().unwrap();
    assert!(replay.status.success());
    let replayed: serde_json::Value = serde_json::from_slice(&fs::read(second.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outputs"], replayed["outputs"]);
    assert_eq!(manifest["input_hashes"], replayed["input_hashes"]);
}

#[test]
fn graphless_runs_omit_the_adjacency_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "60");
    let out = dir.path().join("out");
    assert!(condense(&data, &out, &["--no-structure", "--init", "herding"]).status.success());
    assert!(!out.join("synthetic/adj.tsv").exists());
    assert!(load_synthetic(&out.join("synthetic")).unwrap().adjacency().is_none());
}

#[test]
fn whole_baseline_report_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "60");
    let out = dir.path().join("eval");
    ok(&["eval", "--data", p(&data), "--whole-baseline", "--out", p(&out), "--seeds", "2", "--epochs", "20", "--jobs", "2"]);
    let graph = load_dataset(&data).unwrap();
    let cfg = EvalConfig { epochs: 20, seeds: vec![0, 1], ..EvalConfig::default() };
    let expected = train_eval_pipeline(&graph, TrainingData::Whole, &cfg).unwrap();
    let written = fs::read_to_string(out.join("report.json")).unwrap();
    assert_eq!(written, serde_json::to_string_pretty(&expected).unwrap() + "\n");
}

#[test]
fn eval_needs_exactly_one_training_source() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "60");
    let out = dir.path().join("eval");
    assert_eq!(mlgc(&["eval", "--data", p(&data), "--out", p(&out)]).status.code(), Some(2));
    let both = mlgc(&["eval", "--data", p(&data), "--out", p(&out), "--whole-baseline", "--synthetic", p(&data)]);
    assert_eq!(both.status.code(), Some(2));
    assert_eq!(mlgc(&["eval", "--data", p(&data), "--out", p(&out), "--whole-baseline", "--seeds", "0"]).status.code(), Some(2));
}

#[test]
fn inspect_tables_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "60");
    let condensed = dir.path().join("condensed");
    assert!(condense(&data, &condensed, &[]).status.success());
    let out = dir.path().join("inspect");
    ok(&["inspect", "--data", p(&data), "--synthetic", p(&condensed.join("synthetic")), "--out", p(&out)]);

    let correlation = fs::read_to_string(out.join("correlation.csv")).unwrap();
    let mut lines = correlation.lines();
    assert_eq!(lines.next(), Some("graph,class,class_0,class_1,class_2"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        let class: usize = row[1].parse().unwrap();
        let values: Vec<f64> = row[2..].iter().map(|v| v.parse().unwrap()).collect();
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(values[class] == 1.0 || values.iter().all(|&v| v == 0.0));
    }

    let distribution = fs::read_to_string(out.join("distribution.csv")).unwrap();
    let mut lines = distribution.lines();
    assert_eq!(lines.next(), Some("class,original,synthetic"));
    assert_eq!(lines.count(), 3);
}
