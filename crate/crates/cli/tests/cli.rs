use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn model() -> String {
    root().join("models/recupera_synthetic.json").display().to_string()
}

fn hyexo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyexo")).args(args).output().unwrap()
}

fn recipe(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn solve(recipe: &str, out: &Path, extra: &[&str]) -> Output {
    let (model, out) = (model(), out.display().to_string());
    let mut args = vec!["solve", "--model", &model, "--recipe", recipe, "--out", &out];
    args.extend_from_slice(extra);
    hyexo(&args)
}

#[test]
fn sit_writes_all_outputs_and_plotdata_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let sit = root().join("recipes/sit.json").display().to_string();
    let out = solve(&sit, dir.path(), &["--dt", "0.04"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.csv", "actuators.csv", "validation.json", "solve_log.csv", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let header: Vec<&str> = traj.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 3 * 20);
    assert_eq!(header[0], "t");
    assert_eq!(traj.lines().count(), 1 + 101);
    let first: Vec<&str> = traj.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "0.00000000e0");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["overrides"]["dt"], 0.04);
    assert_eq!(manifest["recipe_path"], sit.as_str());

    let plot = hyexo(&["plotdata", &dir.path().display().to_string()]);
    assert_eq!(plot.status.code(), Some(0));
    let text = String::from_utf8(plot.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("time,series,value"));
    let series: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert!(series.contains("y_knee_l") && series.contains("effort_knee_l") && series.contains("pos_hip_l_leg0_crank"));
    assert_eq!(series.len(), 3 * 20 + 3 * 20);
}

#[test]
fn overlong_stride_reports_rom_violations() {
    let dir = tempfile::tempdir().unwrap();
    let r =
        recipe(dir.path(), "long.json", r#"{"schema_version": "1.0", "motion": "walk", "steps": 2, "stride_length": 0.35, "dt": 0.05}"#);
    let out = solve(&r, &dir.path().join("run"), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/validation.json")).unwrap()).unwrap();
    let joints: Vec<&str> = v["entries"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["severity"] == "violation")
        .filter_map(|e| e["location"].as_str()?.strip_prefix("joint/"))
        .collect();
    assert!(!joints.is_empty(), "{v}");
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(hyexo(&["solve", "--bogus"]).status.code(), Some(64));
    assert_eq!(hyexo(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(hyexo(&[]).status.code(), Some(64));
    assert_eq!(hyexo(&["bench", "--model", "x", "--knots", "1"]).status.code(), Some(64));
    assert_eq!(hyexo(&["--help"]).status.code(), Some(0));
}

#[test]
fn input_failures_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hyexo(&["check-model", "/nonexistent/model.json"]).status.code(), Some(66));
    let broken = recipe(dir.path(), "broken.json", "{ not json");
    assert_eq!(hyexo(&["check-model", &broken]).status.code(), Some(65));
    let bad = recipe(dir.path(), "bad.json", r#"{"schema_version": "1.0", "motion": "walk", "steps": 3}"#);
    let out = solve(&bad, &dir.path().join("a"), &[]);
    assert_eq!(out.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&out.stderr).contains("$.steps"));
    let deep = recipe(dir.path(), "deep.json", r#"{"schema_version": "1.0", "motion": "sit", "delta_z": 0.5}"#);
    assert_eq!(solve(&deep, &dir.path().join("b"), &[]).status.code(), Some(4));
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let r = recipe(dir.path(), "walk.json", r#"{"schema_version": "1.0", "motion": "walk", "steps": 2, "dt": 0.05}"#);
    let out = solve(&r, &dir.path().join("run"), &["--max-iters", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/solve_log.csv").is_file());
}

#[test]
fn check_model_and_bench_print_reports() {
    let out = hyexo(&["check-model", &model()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("n=148 m=20 p=20 n_c=102\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("submechanism/")).count(), 7);

    let out = hyexo(&["bench", "--model", &model(), "--knots", "50"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("warm") && l.contains(" 50 ")));
    assert!(text.contains("hip_l"));
}
