//! End-to-end checks of the `bench` binary: every subcommand that can run
//! without a live cluster, exercised through real process spawns.

use std::path::PathBuf;
use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bench-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn help_lists_every_subcommand() {
    let out = bench().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in [
        "master",
        "worker",
        "source",
        "govern",
        "sweep",
        "report",
        "bounds",
        "calibrate",
    ] {
        assert!(text.contains(cmd), "--help is missing {cmd}");
    }
}

#[test]
fn bounds_prints_the_default_grid() {
    let out = bench().arg("bounds").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("network_hz"));
    assert!(text.contains("regime"));
    // 42 grid cells plus the cluster line and the header line.
    assert_eq!(text.lines().count(), 44, "unexpected table:\n{text}");
}

#[test]
fn govern_against_a_mock_reports_the_hidden_threshold() {
    let out = bench()
        .args(["govern", "--mock-threshold", "777", "--size", "1000", "--cpu-us", "0"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["max_hz"], 777);
    assert_eq!(v["unsustainable"], false);
}

#[test]
fn sweep_then_report_produces_csv_svg_and_table() {
    let dir = temp_dir("sweep");
    let grid_path = dir.join("grid.toml");
    std::fs::write(
        &grid_path,
        "adapter = \"mock\"\nsizes_bytes = [1000, 1000000]\ncpu_costs_us = [0, 10000]\n",
    )
    .unwrap();
    let csv_path = dir.join("results.csv");

    let out = bench()
        .args(["sweep", "--grid"])
        .arg(&grid_path)
        .args(["--adapter", "mock", "--out"])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "sweep failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 5, "header plus one row per cell:\n{csv}");

    let svg_path = dir.join("map.svg");
    let out = bench()
        .args(["report", "--map"])
        .arg(&csv_path)
        .arg("--out")
        .arg(&svg_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "report failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(dir.join("map.txt").exists());

    let cmp_path = dir.join("cmp.svg");
    let out = bench()
        .args(["report", "--compare"])
        .arg(&csv_path)
        .arg("--out")
        .arg(&cmp_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "compare failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(cmp_path.exists());
    assert!(dir.join("cmp.normalized.csv").exists());

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn calibrate_emits_parseable_json() {
    let out = bench().args(["calibrate", "--samples", "3"]).output().unwrap();
    // Exit code 1 means the host clock is too noisy for tight burns; the
    // JSON must still be well formed.
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["samples"].as_array().unwrap().len() == 3);
    assert!(v["median_overshoot_frac"].is_number());
}

#[test]
fn source_without_count_or_duration_is_rejected() {
    let out = bench()
        .args(["source", "--master", "127.0.0.1:1", "--rate", "10"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
