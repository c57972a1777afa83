//! End-to-end checks of the command line interface and its exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gasflow"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn scratch(test: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gasflow-cli-{test}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn solve_reports_the_triangle_split() {
    let out = bin()
        .args(["solve", data("triangle.gfi").to_str().unwrap()])
        .args(["--solver", "energy-c"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("status=solved"), "{text}");
    assert!(text.contains("+1.757359"), "{text}");
    assert!(text.contains("+1.242641"), "{text}");
}

#[test]
fn solve_writes_a_solution_file_and_warm_starts_newton() {
    let dir = scratch("warm");
    let solution = dir.join("triangle.gfs");
    let out = bin()
        .args(["solve", data("triangle.gfi").to_str().unwrap()])
        .args(["--solver", "miqcqp", "--out", solution.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = std::fs::read_to_string(&solution).unwrap();
    assert!(text.contains("format = \"gfs1\""), "{text}");

    let out = bin()
        .args(["solve", data("triangle.gfi").to_str().unwrap()])
        .args(["--solver", "nr", "--warm-start", solution.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(stdout(&out).contains("iterations=0"), "warm start should already satisfy the tolerance");
}

#[test]
fn warm_start_is_rejected_for_other_solvers() {
    let out = bin()
        .args(["solve", data("triangle.gfi").to_str().unwrap()])
        .args(["--solver", "energy-c", "--warm-start", "whatever.gfs"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{out:?}");
}

#[test]
fn proven_infeasibility_exits_two() {
    let dir = scratch("infeasible");
    let path = dir.join("backward.gfi");
    // The only route to the demand at node 2 runs backward through a
    // compressor, which is not allowed.
    std::fs::write(
        &path,
        r#"format = "gfi1"

[[node]]
label = 1
pressure = 2500.0

[[node]]
label = 2
injection = 3.0

[[edge]]
kind = "compressor"
from = 1
to = 2
ratio = 1.4

[spec]
reference = 1
"#,
    )
    .unwrap();
    for solver in ["miqcqp", "nr"] {
        let out = bin()
            .args(["solve", path.to_str().unwrap(), "--solver", solver])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2), "solver {solver}: {out:?}");
    }
}

#[test]
fn exhausted_iteration_budget_exits_three() {
    let out = bin()
        .args(["solve", data("belgian_analog.gfi").to_str().unwrap()])
        .args(["--solver", "nr", "--max-iter", "1", "--tol", "1e-12"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");
}

#[test]
fn unreadable_and_malformed_files_exit_four() {
    let out = bin()
        .args(["solve", "/nonexistent/nowhere.gfi", "--solver", "nr"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{out:?}");

    let dir = scratch("malformed");
    let path = dir.join("broken.gfi");
    std::fs::write(&path, "format = \"gfi1\"\n[[node]\nlabel = ").unwrap();
    let out = bin()
        .args(["check", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{out:?}");
}

#[test]
fn generate_writes_parseable_instances() {
    let dir = scratch("generate");
    let out = bin()
        .args(["generate", "belgian"])
        .args(["--base", data("belgian_analog.gfi").to_str().unwrap()])
        .args(["--count", "3", "--seed", "7"])
        .args(["--out-dir", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert_eq!(files.len(), 3);
    for f in &files {
        let out = bin().args(["check", f.to_str().unwrap()]).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{f:?}: {out:?}");
    }
}

#[test]
fn bench_writes_reports() {
    let dir = scratch("bench");
    let instances = dir.join("instances");
    bin()
        .args(["generate", "belgian"])
        .args(["--base", data("belgian_analog.gfi").to_str().unwrap()])
        .args(["--count", "2", "--seed", "11"])
        .args(["--out-dir", instances.to_str().unwrap()])
        .output()
        .unwrap();
    let report = dir.join("report.csv");
    let out = bin()
        .args(["bench", "--dir", instances.to_str().unwrap()])
        .args(["--solvers", "a2", "--jobs", "1"])
        .args(["--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("instance,seed,solver,status,gap,"), "{csv}");
    assert_eq!(csv.lines().count(), 1 + 2, "one row per (instance, solver)");
    let json = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed["instances"], 2, "{parsed}");
}

#[test]
fn check_reports_the_cycle_structure() {
    let out = bin()
        .args(["check", data("belgian_analog.gfi").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("valid"), "{text}");
    assert!(text.contains("cycles=4"), "{text}");
    assert!(text.contains("overlapping edges"), "{text}");
    assert!(text.contains("single fixed pressure: yes"), "{text}");
}
