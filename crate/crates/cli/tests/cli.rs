use std::path::Path;
use std::process::{Command, Output};

use jumpset_cli::plot::loglog_from_csv;

fn jumpset(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jumpset"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn solve_disk(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "--resolution",
        "32",
        "solve",
        "--phantom",
        "disk",
        "--noise-sigma",
        "0.05",
        "--save-data",
        "f.pgm",
    ];
    args.extend_from_slice(extra);
    jumpset(dir, &args)
}

#[test]
fn solve_then_jumps_and_curvature() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = solve_disk(d, &["--panel", "panel.png"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("converged: true"));
    for f in ["solution.pgm", "f.pgm", "panel.png"] {
        assert!(d.join(f).exists(), "{f} missing");
    }

    let sol = d.join("solution.pgm");
    let data = d.join("f.pgm");
    let out = jumpset(d, &["--json", "jumps", "--solution", sol.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["solution_jumps"].as_u64().unwrap() > 0);
    assert_eq!(summary["containment_excess"].as_f64(), Some(0.0));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("jumps.json")).unwrap()).unwrap();
    assert!(doc["solution"].is_object());

    let out = jumpset(d, &["curvature", "--input", sol.to_str().unwrap(), "--overlay", "overlay.png"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("curvature.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,contour,curvature"));
    assert!(csv.lines().count() > 10);
    assert!(d.join("overlay.png").exists());
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(solve_disk(d, &[]).status.success());
    let before = std::fs::read(d.join("solution.pgm")).unwrap();

    let again = solve_disk(d, &["--alpha", "0.2"]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(std::fs::read(d.join("solution.pgm")).unwrap(), before);

    let forced = solve_disk(d, &["--alpha", "0.2", "--force"]);
    assert!(forced.status.success());
    assert_ne!(std::fs::read(d.join("solution.pgm")).unwrap(), before);
}

#[test]
fn constants_sweep_writes_table_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = jumpset(d, &["--json", "constants", "--sweep", "--density", "32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((summary["pair_slope"].as_f64().unwrap() - 2.0).abs() < 0.1);
    assert!((summary["identity_slope"].as_f64().unwrap() - 1.0).abs() < 0.1);
    let png = image::open(d.join("constants-sweep.png")).unwrap();
    assert!(png.width() > 100);
}

#[test]
fn suite_runs_a_single_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = jumpset(d, &["suite", "--only", "constant-image"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("constant-image: PASS"));
    let lines = std::fs::read_to_string(d.join("suite.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1);
    assert!(d.join("constant-image.json").exists());

    let unknown = jumpset(d, &["suite", "--only", "no-such-scenario"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn small_commands_report_sensible_values() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = jumpset(d, &["--json", "wedge"]);
    let w: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(w["rel_error"].as_f64().unwrap() <= 0.02);

    let out = jumpset(d, &["--json", "rcurv"]);
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["rel_error"].as_f64().unwrap() <= 0.01);

    let out = jumpset(d, &["--json", "--resolution", "64", "transport"]);
    assert!(out.status.success());
    let t: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(t["ratio"].as_f64().unwrap() <= 1.05);
}

#[test]
fn empty_csv_is_an_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "rho,t_pair\n").unwrap();
    let png = dir.path().join("empty.png");
    assert!(loglog_from_csv(&csv, "rho", &["t_pair"], &png, false).is_err());
    assert!(!png.exists());

    std::fs::write(&csv, "rho,t_pair\n0.1,0.01\n0.2,0.04\n0.4,0.16\n").unwrap();
    assert!(loglog_from_csv(&csv, "rho", &["missing"], &png, false).is_err());
    assert!(!png.exists());
    assert!(loglog_from_csv(&csv, "rho", &["t_pair"], &png, false).is_ok());
}
