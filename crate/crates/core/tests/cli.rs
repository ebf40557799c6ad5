use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use beenoc_core::report::{flow_aggregates, parse_flows_csv};

const CONFIG: &str = "\
mesh_width = 4
mesh_height = 4
seed = 11
wire_count = 4
arrival_rate = 0.02
flow_count = 60
bandwidths = 1:2,2:1
hold_time = geometric:40
";

fn beenoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beenoc")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let res = beenoc(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--trace"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["flows.csv", "summary.csv", "config.txt", "trace.tsv"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("offered 60"));
    let echoed = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("wire_count = 4"));
    assert!(echoed.contains("t_hop = 1  # default"));
    let trace = fs::read_to_string(out.join("trace.tsv")).unwrap();
    assert!(trace.starts_with("cycle\tevent\t"));
    assert!(trace.lines().count() > 60);
}

#[test]
fn summary_recomputes_from_flows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    assert_eq!(beenoc(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let flows = parse_flows_csv(&fs::read_to_string(out.join("flows.csv")).unwrap()).unwrap();
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let agg = flow_aggregates(&flows);
    assert_eq!(row[0], agg.offered.to_string());
    assert_eq!(row[1], agg.established.to_string());
    assert_eq!(row[2], agg.failed.to_string());
    assert_eq!(row[3], format!("{:.6}", agg.success_ratio));
    assert_eq!(row[4], format!("{:.6}", agg.mean_setup_latency));
    assert_eq!(row[5], format!("{:.6}", agg.p95_setup_latency));
    assert_eq!(row[6], format!("{:.6}", agg.mean_path_stretch));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        assert_eq!(beenoc(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    }
    assert_eq!(beenoc(&["run", "--config", &cfg, "--seed", "12", "--out", c.to_str().unwrap()]).status.code(), Some(0));
    for name in ["flows.csv", "summary.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(a.join("flows.csv")).unwrap(), fs::read(c.join("flows.csv")).unwrap());
}

#[test]
fn explicit_workload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let wl = dir.path().join("flows.txt");
    fs::write(&wl, "# src, dst, bw, arrival, hold\n0,0,3,3,1,0,20\n3,0,0,3,2,5,20\n").unwrap();
    let out = dir.path().join("out");
    let res = beenoc(&["run", "--config", &cfg, "--workload", wl.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let flows = parse_flows_csv(&fs::read_to_string(out.join("flows.csv")).unwrap()).unwrap();
    assert_eq!(flows.len(), 2);
    assert!(flows.iter().all(|f| f.path_length == Some(f.manhattan)));
}

#[test]
fn verify_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), CONFIG);
    let res = beenoc(&["verify", "--config", &good]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8(res.stdout).unwrap().ends_with("config ok\n"));

    let bad = write_config(dir.path(), &format!("{CONFIG}wire_cnt = 3\n"));
    let res = beenoc(&["verify", "--config", &bad]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("wire_cnt") && err.contains("line 9"), "{err}");

    let missing = write_config(dir.path(), "mesh_width = 4\nseed = 1\n");
    assert_eq!(beenoc(&["verify", "--config", &missing]).status.code(), Some(2));
}

#[test]
fn missing_file_is_io_error() {
    let res = beenoc(&["verify", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn bad_arguments() {
    assert_eq!(beenoc(&["run"]).status.code(), Some(2));
    assert_eq!(beenoc(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn oracle_check_small_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let small = write_config(dir.path(), CONFIG);
    let res = beenoc(&["oracle-check", "--config", &small]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8(res.stdout).unwrap().contains("100 scenarios"));

    let big = write_config(dir.path(), "mesh_width = 8\nmesh_height = 8\nseed = 1\n");
    let res = beenoc(&["oracle-check", "--config", &big]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8(res.stderr).unwrap().contains("too large"));
}
