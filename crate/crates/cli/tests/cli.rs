use std::path::Path;
use std::process::Command;

use sofr_core::datagen::{generate, Design, SettingId, SimulationSetting};
use sofr_core::RngStream;

fn sofr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sofr"))
}

fn write_dataset(dir: &Path) -> std::path::PathBuf {
    let ds = generate(&SimulationSetting::new(SettingId::G0, 0.5, 60, Design::Dense), RngStream::new(1, 0)).unwrap();
    let path = dir.join("data.csv");
    ds.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn no_args_prints_usage_and_exits_2() {
    let out = sofr().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_exits_2() {
    let out = sofr().args(["simulate", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ksm_linearity_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let out = sofr()
        .args(["test", "--data", data.to_str().unwrap(), "--method", "ksm", "--hypothesis", "linear"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ksm"));
    assert_eq!(sofr_cli::run(["sofr", "test", "--method", "ksm", "--hypothesis", "linear"]), 2);
}

#[test]
fn single_test_prints_result() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let out = sofr()
        .args(["test", "--data", data.to_str().unwrap(), "--method", "hr", "--hypothesis", "linear"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = v["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn missing_data_file_is_a_runtime_error() {
    let out = sofr().args(["test", "--data", "/nonexistent.csv", "--method", "ggf", "--hypothesis", "null"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("g0_size.txt");
    std::fs::write(&spec, "kind = size\nsetting = G0\nn = 50\nmethods = ksm\nreplicates = 100\nseed = 4\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = sofr()
        .args(["simulate", "--spec", spec.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
        .env("SOFR_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("g0_size.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "setting,design,method,n,alpha,delta,rate,se,R,failures");
    assert!(lines[1].starts_with("G0,dense,ksm,50,0.05,0,"));
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("g0_size.json")).unwrap()).unwrap();
    assert!(side["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn invalid_spec_and_thread_count_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.txt");
    std::fs::write(&spec, "kind = size\nsetting = G0\n").unwrap();
    let out = sofr().args(["simulate", "--spec", spec.to_str().unwrap(), "--out", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&spec, "kind = size\nsetting = G0\nn = 50\nmethods = ksm\nreplicates = 100\n").unwrap();
    let out = sofr()
        .args(["simulate", "--spec", spec.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .env("SOFR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tecator_rejects_malformed_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("t.csv");
    std::fs::write(&bad, "a,b\n1,2\n").unwrap();
    let out = sofr()
        .args(["tecator", "--data", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape"));
}

#[test]
fn tecator_same_seed_same_output() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/tecator.csv");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = sofr()
            .args(["tecator", "--data", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
            .args(["--seed", "11", "--bootstrap", "100", "--n-null", "1000"])
            .env("SOFR_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read_to_string(out_dir.join("tecator.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0].lines().count(), 19);
    assert!(!outputs[0].contains('\r'));
}
