//! Command-line behaviour: outputs, exit codes and rejected inputs.

use std::process::{Command, Output};

fn bpve(args: &[&str], out: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpve"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

#[test]
fn diag_writes_report_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpve(&["diag", "--config", "lf-nu2", "--format", "json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metadata"]["scenario"], "lf-nu2");
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["status"] == "pass"));
}

#[test]
fn small_budget_is_misconfigured() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpve(&["fdd", "--replicates", "1000"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("name,value,tolerance,radius,status"));
    assert!(stdout.contains("MISCONFIGURED"));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bpve(&["yaglom", "--config", "no-such-scenario"], dir.path()).status.code(), Some(2));
    assert_eq!(bpve(&["yaglom", "--replicates", "10"], dir.path()).status.code(), Some(2));
    assert_eq!(bpve(&["theorem2", "--config", "lf-nu2"], dir.path()).status.code(), Some(2));
}

#[test]
fn summary_lists_each_check_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpve(&["yaglom", "--config", "bernoulli-nu0"], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let names: Vec<&str> = stdout.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for expected in ["yaglom_tv", "yaglom_monotone", "survival_scaling", "conditional_mean"] {
        assert_eq!(names.iter().filter(|n| **n == expected).count(), 1, "{expected}");
    }
}
