use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opwhf")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn solve_into(name: &str, dir: &Path, extra: &[&str]) -> Output {
    let scen = fixture(name);
    let mut args = vec!["solve", "--scenario", scen.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn validate_exit_codes() {
    let o = run(&["validate", "--scenario", fixture("micro").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(fixture("micro")).unwrap()).unwrap();
    doc["power"]["nodes"].as_array_mut().unwrap().push(serde_json::json!({"id": "E2", "p_load": [0.1, 0.1], "q_load": [0.0, 0.0]}));
    let lines = doc["power"]["lines"].as_array_mut().unwrap();
    lines.push(serde_json::json!({"id": "L12", "from": "E1", "to": "E2", "r": 0.01, "x": 0.02}));
    lines.push(serde_json::json!({"id": "L02", "from": "E0", "to": "E2", "r": 0.01, "x": 0.02}));
    let cyclic = dir.path().join("cyclic.json");
    fs::write(&cyclic, doc.to_string()).unwrap();
    let o = run(&["validate", "--scenario", cyclic.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("not a tree") && err.contains("cycle through lines L01, L12, L02"), "{err}");
    let o = run(&["validate", "--no-such-flag"]);
    assert_eq!(code(&o), 1);

    let o = run(&["validate", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn decoupled_solve_writes_artifacts_with_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let o = solve_into("decoupled", dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 2, "header plus one record: {trace}");
    assert!(serde_json::from_str::<Value>(lines[0]).unwrap().get("header").is_some());
    let rec: Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(rec["m"], 1);
    for name in ["solution.json", "residuals.json"] {
        let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap();
        assert!(v.is_object(), "{name}");
    }
}

#[test]
fn solve_outcome_codes() {
    let dir = tempfile::tempdir().unwrap();
    // certification threshold below what any solver run reaches
    let strict = dir.path().join("strict.json");
    fs::write(&strict, r#"{"certify_tol": 1e-15}"#).unwrap();
    let o = solve_into("micro", dir.path(), &["--options", strict.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let o = solve_into("micro", dir.path(), &["--max-outer", "1"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let o = solve_into("infeasible_heat", dir.path(), &[]);
    assert_eq!(code(&o), 4);
    let err = stderr(&o);
    assert!(err.contains("initialization") && err.contains("slack"), "{err}");

    let o = solve_into("micro", dir.path(), &["--tol-outer=-1"]);
    assert_eq!(code(&o), 1);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"no_such_option": 1}"#).unwrap();
    let o = solve_into("micro", dir.path(), &["--options", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

fn without_header(text: &str) -> String {
    text.lines().skip(1).collect::<Vec<_>>().join("\n")
}

#[test]
fn solve_is_reproducible_modulo_the_header() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = solve_into("micro", d.path(), &["--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for name in ["solution.json", "residuals.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let ta = fs::read_to_string(a.path().join("trace.jsonl")).unwrap();
    let tb = fs::read_to_string(b.path().join("trace.jsonl")).unwrap();
    assert_eq!(without_header(&ta), without_header(&tb));
}

#[test]
fn validate_solution_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_into("micro", dir.path(), &[])), 0);
    let sol = dir.path().join("solution.json");
    let scen = fixture("micro");
    let check_dir = dir.path().join("check");
    let o = run(&["validate-solution", "--scenario", scen.to_str().unwrap(), "--solution", sol.to_str().unwrap(), "--out", check_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(check_dir.join("residuals.json").exists());

    // doubling every heat flow breaks mass balance at the CHP
    let mut x: Value = serde_json::from_str(&fs::read_to_string(&sol).unwrap()).unwrap();
    for slot in x["heat"].as_array_mut().unwrap() {
        for q in slot["q_s"].as_array_mut().unwrap() {
            *q = Value::from(q.as_f64().unwrap() * 2.0);
        }
    }
    let broken = dir.path().join("broken.json");
    fs::write(&broken, x.to_string()).unwrap();
    let o = run(&["validate-solution", "--scenario", scen.to_str().unwrap(), "--solution", broken.to_str().unwrap(), "--out", check_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn compare_on_decoupled_has_equal_totals() {
    let dir = tempfile::tempdir().unwrap();
    let scen = fixture("decoupled");
    let o = run(&["compare", "--scenario", scen.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let total: Vec<&str> = csv.lines().find(|l| l.starts_with("total,")).unwrap().split(',').collect();
    assert_eq!(total[1], total[2], "{csv}");
}

#[test]
fn sensitivity_default_box_has_all_modes_and_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = run(&["sensitivity", "--out", d.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let csv = fs::read_to_string(a.path().join("modemap.csv")).unwrap();
    for label in [",FlowRate,", ",Temperature,", ",Mixed,"] {
        assert!(csv.contains(label), "{label}");
    }
    assert_eq!(csv.as_bytes(), fs::read(b.path().join("modemap.csv")).unwrap().as_slice());
    let o = run(&["sensitivity", "--resolution", "1", "--out", a.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn uncertainty_with_zero_spec_is_a_single_zero_row() {
    let dir = tempfile::tempdir().unwrap();
    let scen = fixture("micro");
    let o = run(&["uncertainty", "--scenario", scen.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("uncertainty.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{csv}");
    assert!(rows[0].ends_with(",0%"), "{}", rows[0]);
    let o = run(&["uncertainty", "--scenario", scen.to_str().unwrap(), "--levels", "abc", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
