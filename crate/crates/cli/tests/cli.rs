use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn anchor_da(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anchor-da"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .args(["--threads", "1"])
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = anchor_da(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    anchor_da(dir, args).status.code().expect("exit code")
}

fn simulated(seed: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--seed", seed, "--runs", "8", "--years", "120"]);
    dir
}

fn report(dir: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(dir.join("fit_report.txt"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["--help"]), 0);
    assert_eq!(code(dir.path(), &["--version"]), 0);
}

#[test]
fn bad_input_maps_to_validation_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["simulate"]), 1, "missing seed");
    assert_eq!(code(d, &["simulate", "--seed", "1", "--grid", "0x8"]), 1);
    assert_eq!(code(d, &["simulate", "--seed", "1", "--grid", "sixteen"]), 1);
    assert_eq!(code(d, &["frobnicate"]), 1);
}

#[test]
fn stage_errors_map_to_their_exit_codes() {
    let dir = simulated("5");
    let d = dir.path();
    assert_eq!(code(d, &["fit", "--seed", "5", "--train-fraction", "1.0"]), 1);
    assert_eq!(code(d, &["fit", "--seed", "5", "--lambda", "-1"]), 1);
    ok(d, &["fit", "--seed", "5"]);
    assert_eq!(code(d, &["detect", "--z", "0"]), 1);
    assert_eq!(code(d, &["robustness", "--deltas="]), 1);
    assert_eq!(code(d, &["robustness", "--forcing", "anthropogenic"]), 1);
    assert_eq!(code(d, &["detect", "--data", "missing.csv"]), 2);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "format_version = 1\nseed = 1\n[fit]\ngama = 2.0\n").unwrap();
    assert_eq!(code(dir.path(), &["simulate", "--config", cfg.to_str().unwrap()]), 1);
    fs::write(&cfg, "format_version = 1\nseed = 1\n[simulate.noise]\nsigmaa = 2.0\n").unwrap();
    assert_eq!(code(dir.path(), &["simulate", "--config", cfg.to_str().unwrap()]), 1);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "format_version = 1\nseed = 3\n[simulate]\nruns = 4\nyears = 90\n").unwrap();
    ok(dir.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--runs", "6"]);
    let data = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(data.lines().filter(|l| !l.starts_with('#')).count() - 1, 6 * 90);
}

#[test]
fn gamma_one_and_ridge_write_the_same_model() {
    let dir = simulated("7");
    let d = dir.path();
    ok(d, &["fit", "--seed", "7", "--gamma", "1", "--lambda", "0.5"]);
    let anchor = fs::read(d.join("model.json")).unwrap();
    ok(d, &["fit", "--seed", "7", "--estimator", "ridge", "--lambda", "0.5"]);
    assert_eq!(anchor, fs::read(d.join("model.json")).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = simulated("9");
    let d = dir.path();
    let pipeline: [&[&str]; 4] = [
        &["fit", "--seed", "9", "--gamma", "4"],
        &["cv", "--seed", "9", "--gammas", "1,4", "--lambdas", "0.1,1"],
        &["detect"],
        &["robustness", "--deltas", "0,-2,2"],
    ];
    for args in pipeline {
        ok(d, args);
    }
    let first = snapshot(d);
    ok(d, &["simulate", "--seed", "9", "--runs", "8", "--years", "120"]);
    for args in pipeline {
        ok(d, args);
    }
    assert_eq!(first, snapshot(d));
    assert!(first.contains_key("run_manifest_robustness.json"));
}

#[test]
fn zero_shift_risk_is_the_reported_test_error() {
    let dir = simulated("11");
    let d = dir.path();
    ok(d, &["fit", "--seed", "11", "--gamma", "4"]);
    ok(d, &["robustness", "--deltas", "0"]);
    let curve = fs::read_to_string(d.join("risk_curve.csv")).unwrap();
    let row = curve.lines().find(|l| l.starts_with("0,")).expect("delta 0 row");
    let risk: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    let mse: f64 = report(d)["test_mse"].parse().unwrap();
    assert_eq!(risk, mse);
}

#[test]
fn control_runs_show_no_detection() {
    let dir = simulated("2");
    let d = dir.path();
    ok(d, &["fit", "--seed", "2"]);
    let control = d.join("control");
    let cfg = d.join("control.toml");
    fs::write(&cfg, "format_version = 1\nseed = 3\n[simulate]\nruns = 6\nscenario_rule = \"all_control\"\n").unwrap();
    ok(&control, &["simulate", "--config", cfg.to_str().unwrap()]);
    let data = control.join("data.csv");
    ok(d, &["detect", "--scope", "all", "--data", data.to_str().unwrap()]);
    let summary = fs::read_to_string(d.join("detection_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "control");
        assert_eq!(cols[3], "", "{row}");
    }
}

#[test]
fn manifest_records_checksums_of_outputs() {
    let dir = simulated("13");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run_manifest_simulate.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 13);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"].as_str().unwrap().ends_with("data.csv")));
    for o in outputs {
        assert_eq!(o["sha256"].as_str().unwrap().len(), 64);
    }
}

// Pinned on x86_64 Linux; transcendental functions come from the platform libm.
const GOLDEN: [(&str, &str); 3] = [
    ("data.csv", "57a90b55a75e4ef18b411a45782a3fd2f4d24d2437535e60085c0a03c310024d"),
    ("data.toml", "18e9d4e48bd832f3360592a040b2e3d7cae6536a5d234f7621673e124ec99737"),
    ("truth.json", "61f7f6bdea57d7a90b4e0f426d6e2ecf3a0ad31b0c049e672216a91aeebdac3f"),
];

#[test]
fn golden_seed_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--seed", "1"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run_manifest_simulate.json")).unwrap()).unwrap();
    let recorded: BTreeMap<&str, &str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["path"].as_str().unwrap(), o["sha256"].as_str().unwrap()))
        .collect();
    for (name, sha) in GOLDEN {
        assert_eq!(recorded[name], sha, "{name}");
    }

    ok(d, &["fit", "--seed", "1", "--gamma", "16"]);
    let r = report(d);
    assert_eq!(r["test_models"], "M01");
    let close = |key: &str, want: f64| {
        let got: f64 = r[key].parse().unwrap();
        assert!((got - want).abs() < 1e-9, "{key}: {got} vs {want}");
    };
    close("test_rmse", 0.3462413251812882);
    close("test_r2", 0.9676760743755557);

    ok(d, &["detect"]);
    let summary = fs::read_to_string(d.join("detection_summary.csv")).unwrap();
    let row = summary.lines().find(|l| l.starts_with("M01,rcp85,")).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[3], "2016");
    assert_eq!(cols[7], "true");
}
