use std::path::Path;
use std::process::Command;

use serde_json::Value;
use wiretap_cli::commands::{BerRow, LeakageRow};
use wiretap_cli::output::read_csv;

fn wiretap(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wiretap"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("WIRETAP_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn oracle_estimate_on_pure_noise_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("noise.wtp");
    let data_s = data.to_str().unwrap();
    let out = wiretap(
        dir.path(),
        &["gen-data", "--channel", "bsc:0.5", "--set", &format!("data.path={data_s}"), "--set", "data.count=2000"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = wiretap(dir.path(), &["estimate", "--estimator", "oracle", "--set", &format!("data.path={data_s}")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json_file(&dir.path().join("estimate.json"));
    let raw = doc["result"]["report"]["raw_bits"].as_f64().unwrap();
    assert!(raw.abs() <= 1e-9, "raw = {raw}");
    assert!(doc["provenance"]["config"]["system.code"].is_string());
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn hamming_sweep_has_one_row_per_point_and_hash_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = wiretap(
        dir.path(),
        &["leakage-sweep", "--estimator", "oracle", "--set", "sweep.ber_samples=2000"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.path().join("leakage.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# wiretap "));
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "snr_db_or_pe,estimator,uhf,mi_raw_bits,mi_proj_per_bit,ber,stderr"
    );
    let rows: Vec<LeakageRow> = read_csv(&path).unwrap();
    assert_eq!(rows.len(), 22);
    let first = rows.iter().find(|r| r.snr_db_or_pe == 0.0 && !r.uhf).unwrap();
    assert!((first.mi_proj_per_bit - 1.0).abs() < 1e-9);
    for r in rows.iter().filter(|r| r.snr_db_or_pe == 0.5) {
        assert!(r.mi_raw_bits.abs() < 1e-9);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "ber-sweep",
        "--code",
        "bch:15:5",
        "--k",
        "2",
        "--b",
        "3",
        "--set",
        "sweep.values=[0.05,0.1,0.2]",
        "--set",
        "sweep.ber_samples=3000",
    ];
    for d in [&a, &b] {
        assert!(wiretap(d.path(), &args).status.success());
    }
    let fa = std::fs::read(a.path().join("ber.csv")).unwrap();
    let fb = std::fs::read(b.path().join("ber.csv")).unwrap();
    assert_eq!(fa, fb);
    let rows: Vec<BerRow> = read_csv(&a.path().join("ber.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].raw_ber <= rows[2].raw_ber);
}

#[test]
fn train_and_data_files_do_not_depend_on_output_directory() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let train = ["train", "--set", "train.epochs=1", "--set", "train.samples=1000", "--set", "train.eval_samples=500"];
    for d in [&a, &b] {
        assert!(wiretap(d.path(), &train).status.success());
        assert!(wiretap(d.path(), &["gen-data", "--set", "data.count=100"]).status.success());
    }
    for name in ["report.json", "trace.jsonl", "dataset.json", "dataset.wtp", "model.cnb"] {
        let fa = std::fs::read(a.path().join(name)).unwrap();
        let fb = std::fs::read(b.path().join(name)).unwrap();
        assert!(fa == fb, "{name} differs");
    }
}

#[test]
fn train_then_estimate_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = wiretap(
        dir.path(),
        &[
            "train",
            "--set",
            "train.epochs=2",
            "--set",
            "train.samples=2000",
            "--set",
            "train.eval_samples=1000",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    // provenance, report, two epochs
    assert_eq!(trace.lines().count(), 4);
    let ckpt = dir.path().join("model.cnb");
    assert!(ckpt.exists());

    let data = dir.path().join("d.wtp");
    let set_data = format!("data.path={}", data.display());
    assert!(wiretap(dir.path(), &["gen-data", "--set", &set_data, "--set", "data.count=500"]).status.success());
    let set_ckpt = format!("checkpoint={}", ckpt.display());
    let out = wiretap(dir.path(), &["estimate", "--set", &set_data, "--set", &set_ckpt]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json_file(&dir.path().join("estimate.json"));
    let proj = doc["result"]["report"]["projected_bits"].as_f64().unwrap();
    assert!((0.0..=3.0).contains(&proj));
}

#[test]
fn oracle_and_bounds_and_design_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let ok = |args: &[&str]| {
        let out = wiretap(dir.path(), args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["oracle"]);
    ok(&["bounds", "--set", "bounds.samples=2000"]);
    ok(&["design-hash", "--estimator", "oracle", "--channel", "bsc:0.2", "--set", "design.max_leakage=0.5"]);
    let oracle = std::fs::read_to_string(dir.path().join("oracle.jsonl")).unwrap();
    assert_eq!(oracle.lines().count(), 4);
    let grid = std::fs::read_to_string(dir.path().join("bounds_grid.csv")).unwrap();
    assert_eq!(grid.lines().nth(1).unwrap(), "epsilon,B_bits,mean_psi,accept_frac");
    let gap = json_file(&dir.path().join("gap.json"));
    assert!(gap["result"]["k_init"]["k0"].as_u64().unwrap() >= 1);
    let design = std::fs::read_to_string(dir.path().join("design.jsonl")).unwrap();
    let summary: Value = serde_json::from_str(design.lines().last().unwrap()).unwrap();
    assert!(summary["final_k"].as_u64().is_some());
}

#[test]
fn failures_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| wiretap(dir.path(), args).status.code().unwrap();
    let config = code(&["oracle", "--set", "system.nope=1"]);
    let missing = code(&["estimate", "--estimator", "oracle", "--set", "data.path=/nonexistent/x.wtp"]);
    let budget = code(&["oracle", "--code", "identity:40", "--k", "40", "--b", "0", "--channel", "bsc:0.1"]);
    assert_eq!(config, 2);
    assert_eq!(missing, 4);
    assert_eq!(budget, 3);
}
