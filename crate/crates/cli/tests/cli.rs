use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn snnrt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snnrt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn snnrt")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = snnrt(args, cwd);
    assert!(
        out.status.success(),
        "snnrt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn toy_setup() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(
        &[
            "fixture",
            "toy",
            "-o",
            "toy.json",
            "--events-dir",
            "set",
            "--samples",
            "3",
        ],
        dir.path(),
    );
    ok(
        &[
            "profile",
            "--model",
            "toy.json",
            "--dataset",
            "set",
            "-o",
            "profile.json",
        ],
        dir.path(),
    );
    dir
}

#[test]
fn toy_prune_removes_half_the_channels() {
    let dir = toy_setup();
    let profile = json(dir.path().join("profile.json"));
    assert_eq!(profile["samples_profiled"], 3);

    let stdout = ok(
        &[
            "prune",
            "--model",
            "toy.json",
            "--profile",
            "profile.json",
            "-o",
            "pruned.json",
        ],
        dir.path(),
    );
    assert!(stdout.contains("removed 2/4 channels"), "{stdout}");
    assert!(stdout.contains("conv MACs -50.00%"), "{stdout}");

    let plan = json(dir.path().join("pruned.plan.json"));
    assert_eq!(plan["layers"][0]["remove"], serde_json::json!([0, 2]));
    assert_eq!(plan["layers"][0]["kind"], "conv_channels");
    assert_eq!(plan["threshold"], 0);
    let model = json(dir.path().join("pruned.json"));
    assert_eq!(model["layers"][0]["out_channels"], 2);
}

#[test]
fn pruning_a_pruned_model_has_nothing_left() {
    let dir = toy_setup();
    let p = dir.path();
    ok(
        &[
            "prune",
            "--model",
            "toy.json",
            "--profile",
            "profile.json",
            "-o",
            "pruned.json",
        ],
        p,
    );
    ok(
        &[
            "profile",
            "--model",
            "pruned.json",
            "--dataset",
            "set",
            "-o",
            "again.json",
        ],
        p,
    );
    let stdout = ok(
        &[
            "prune",
            "--model",
            "pruned.json",
            "--profile",
            "again.json",
            "-o",
            "same.json",
        ],
        p,
    );
    assert!(stdout.starts_with("nothing to prune"), "{stdout}");
}

#[test]
fn positive_threshold_warns() {
    let dir = toy_setup();
    let out = snnrt(
        &[
            "prune",
            "--model",
            "toy.json",
            "--profile",
            "profile.json",
            "--threshold",
            "1",
            "-o",
            "t.json",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("warning:"));
}

#[test]
fn threshold_that_empties_a_layer_is_refused() {
    let dir = toy_setup();
    let out = snnrt(
        &[
            "prune",
            "--model",
            "toy.json",
            "--profile",
            "profile.json",
            "--threshold",
            "1000",
            "-o",
            "t.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.lines().any(|l| l.starts_with("error: plan error")), "{stderr}");
    assert!(!dir.path().join("t.json").exists());
}

fn predictions(stdout: &str) -> Vec<(String, Value)> {
    let doc: Value = serde_json::from_str(stdout).unwrap();
    doc["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            (
                s["file"].as_str().unwrap().to_string(),
                s["result"]["class_spike_counts"].clone(),
            )
        })
        .collect()
}

#[test]
fn profile_prune_run_gives_identical_predictions() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(
        &[
            "fixture",
            "nmnist-silent",
            "-o",
            "m.json",
            "--events-dir",
            "set",
            "--samples",
            "4",
        ],
        p,
    );
    ok(
        &[
            "profile",
            "--model",
            "m.json",
            "--dataset",
            "set",
            "-o",
            "prof.json",
            "--jobs",
            "3",
        ],
        p,
    );
    let stdout = ok(
        &[
            "prune",
            "--model",
            "m.json",
            "--profile",
            "prof.json",
            "-o",
            "pruned.json",
        ],
        p,
    );
    assert!(stdout.contains("removed"), "{stdout}");

    let before = predictions(&ok(
        &["run", "--model", "m.json", "--dataset", "set", "--format", "json"],
        p,
    ));
    let after = predictions(&ok(
        &["run", "--model", "pruned.json", "--dataset", "set", "--format", "json"],
        p,
    ));
    assert_eq!(before.len(), 4);
    assert_eq!(before, after);
}

#[test]
fn run_is_unchanged_by_reformatting_the_model() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(
        &[
            "fixture",
            "nmnist",
            "-o",
            "m.json",
            "--events-dir",
            "set",
            "--samples",
            "1",
        ],
        p,
    );
    let pretty = serde_json::to_string_pretty(&json(p.join("m.json"))).unwrap();
    std::fs::write(p.join("pretty.json"), pretty).unwrap();
    let a = ok(&["run", "--model", "m.json", "--events", "set/sample-000.bin"], p);
    let b = ok(&["run", "--model", "pretty.json", "--events", "set/sample-000.bin"], p);
    assert_eq!(a, b);
    assert!(a.starts_with("predicted class: "));
}

#[test]
fn raster_lists_every_spike() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(
        &[
            "fixture",
            "nmnist",
            "-o",
            "m.json",
            "--events-dir",
            "set",
            "--samples",
            "1",
        ],
        p,
    );
    let stdout = ok(
        &[
            "run",
            "--model",
            "m.json",
            "--events",
            "set/sample-000.bin",
            "--dump-raster",
            "r.csv",
            "--format",
            "json",
        ],
        p,
    );
    let result: Value = serde_json::from_str(&stdout).unwrap();
    let total: u64 = result["per_layer_spike_totals"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["spikes"].as_u64().unwrap())
        .sum();
    let raster = std::fs::read_to_string(p.join("r.csv")).unwrap();
    let mut lines = raster.lines();
    assert_eq!(lines.next(), Some("step,layer_index,neuron_index"));
    assert_eq!(lines.count() as u64, total);
}

#[test]
fn convert_then_run_matches_direct_run() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(
        &[
            "fixture",
            "nmnist",
            "-o",
            "m.json",
            "--events-dir",
            "set",
            "--samples",
            "1",
        ],
        p,
    );
    let stdout = ok(&["convert", "set/sample-000.bin", "--frames", "10", "-o", "f.json"], p);
    assert!(stdout.contains("[10, 2, 34, 34]"), "{stdout}");
    let dump = json(p.join("f.json"));
    assert_eq!(dump["shape"], serde_json::json!([10, 2, 34, 34]));
    let total: f64 = dump["data"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    let events = std::fs::read(p.join("set/sample-000.bin")).unwrap().len() / 5;
    assert_eq!(total, events as f64);

    let direct = ok(&["run", "--model", "m.json", "--events", "set/sample-000.bin"], p);
    let via_dump = ok(&["run", "--model", "m.json", "--events", "f.json"], p);
    assert_eq!(
        direct.lines().skip(1).collect::<Vec<_>>(),
        via_dump.lines().skip(1).collect::<Vec<_>>()
    );
}

#[test]
fn labelled_csv_dataset_reports_accuracy() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(&["fixture", "stmnist", "-o", "dense.json"], p);
    std::fs::create_dir(p.join("taps")).unwrap();
    for (name, rows) in [
        ("a_3.csv", "t,x,y,p\n0,1,1,1\n5,2,2,0\n9,9,9,1\n"),
        ("b_1.csv", "0,4,4,1\n100,5,5,1\n"),
    ] {
        std::fs::write(p.join("taps").join(name), rows).unwrap();
    }
    let stdout = ok(&["run", "--model", "dense.json", "--dataset", "taps"], p);
    assert!(stdout.contains("accuracy: "), "{stdout}");
    assert!(stdout.contains("/2 labelled samples"), "{stdout}");
}

#[test]
fn bench_json_report() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(
        &[
            "fixture",
            "stmnist",
            "-o",
            "dense.json",
            "--events-dir",
            "set",
            "--samples",
            "1",
        ],
        p,
    );
    let stdout = ok(
        &[
            "bench",
            "--model",
            "dense.json",
            "--events",
            "set/sample-000.json",
            "--runs",
            "7",
            "--format",
            "json",
            "--label",
            "dense",
        ],
        p,
    );
    let r: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(r["runs"], 7);
    assert_eq!(r["label"], "dense");
    let (min, mean, max) = (
        r["min_latency_s"].as_f64().unwrap(),
        r["mean_latency_s"].as_f64().unwrap(),
        r["max_latency_s"].as_f64().unwrap(),
    );
    assert!(min <= mean && mean <= max);
    assert_eq!(r["mac_total"], 100 * 128 + 128 * 10);
    assert_eq!(
        r["memory_estimate_bytes"],
        4 * (100 * 128 + 128 + 128 * 10 + 10) + 8 * (128 + 10) + 4 * 100
    );
    let sha = r["model_sha256"].as_str().unwrap();
    assert_eq!(sha.len(), 64);
    assert!(sha.bytes().all(|b| b.is_ascii_hexdigit()));
    assert!(r["timestamp_unix"].as_u64().unwrap() > 1_600_000_000);

    std::fs::write(p.join("base.json"), &stdout).unwrap();
    let csv = ok(
        &[
            "bench",
            "--model",
            "dense.json",
            "--events",
            "set/sample-000.json",
            "--runs",
            "3",
            "--format",
            "csv",
            "--baseline",
            "base.json",
        ],
        p,
    );
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("label,runs,mean_latency_s"));
    let table = ok(
        &[
            "bench",
            "--model",
            "dense.json",
            "--events",
            "set/sample-000.json",
            "--runs",
            "3",
            "--baseline",
            "base.json",
        ],
        p,
    );
    assert!(table.contains("vs dense"), "{table}");
}

#[test]
fn bench_defaults_to_500_runs() {
    let help = ok(&["bench", "--help"], Path::new("."));
    assert!(help.contains("[default: 500]"), "{help}");
}

#[test]
fn validate_prints_shape_trace() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(&["fixture", "nmnist", "-o", "m.json"], p);
    let table = ok(&["validate", "m.json"], p);
    assert!(table.contains("[12, 30, 30]"), "{table}");
    assert!(table.contains("[12, 15, 15]"), "{table}");
    assert!(table.lines().last().unwrap().starts_with("ok: 9 layers"), "{table}");

    let doc: Value = serde_json::from_str(&ok(&["validate", "m.json", "--format", "json"], p)).unwrap();
    assert_eq!(doc["layers"][0]["output"], serde_json::json!([12, 30, 30]));
    assert_eq!(doc["layers"][0]["macs"], 12 * 30 * 30 * 2 * 25);
}

fn single_error_line(out: &Output) -> String {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: "), "{stderr}");
    stderr
}

#[test]
fn missing_model_is_a_file_error() {
    let dir = TempDir::new().unwrap();
    let out = snnrt(&["run", "--model", "missing.json", "--events", "x.bin"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    single_error_line(&out);
}

#[test]
fn invalid_model_is_a_validation_failure() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("bad.json"),
        r#"{"format_version":1,"input_shape":[1,2,2],"num_steps":2,"layers":[{"type":"flatten"},{"type":"linear","in_features":3,"out_features":1,"weights":[1,1,1],"bias":[0]},{"type":"lif","beta":0.5}]}"#,
    )
    .unwrap();
    let out = snnrt(&["validate", "bad.json"], p);
    assert_eq!(out.status.code(), Some(1));
    let line = single_error_line(&out);
    assert!(line.contains("layer 1"), "{line}");
}

#[test]
fn empty_dataset_is_rejected() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(&["fixture", "toy", "-o", "toy.json"], p);
    std::fs::create_dir(p.join("empty")).unwrap();
    let out = snnrt(
        &["profile", "--model", "toy.json", "--dataset", "empty", "-o", "p.json"],
        p,
    );
    assert_eq!(out.status.code(), Some(2));
    single_error_line(&out);
}

#[test]
fn usage_errors_exit_with_two() {
    let out = snnrt(&["run", "--model", "m.json"], Path::new("."));
    assert_eq!(out.status.code(), Some(2));
}
