//! End-to-end checks of the binary: exit codes, output files, and the
//! stderr error contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fuzzpde"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {text}"))
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn solve_writes_solution_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "solve",
        "--registry",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["problem_source"], "registry:1");
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(outputs, ["solution.csv", "report.json", "manifest.json"]);
    for name in outputs {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }

    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["converged"], true);
    assert!(report["oracle_sup_error"].as_f64().unwrap() < 5e-4);

    let csv = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,u"));
    // 101 x 101 nodes.
    assert_eq!(lines.count(), 101 * 101);
}

#[test]
fn missing_file_exits_two_with_io_error() {
    let out = run(&["solve", "/no/such/problem.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("problem.toml"));
}

#[test]
fn unparseable_problem_file_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    fs::write(
        &path,
        r#"
[pde]
dimension = 1
p = "g*("
f = "k"

[initial]
expression = "c*x^2"

[params.c]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]

[params.g]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]

[params.k]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]

[domain]
m1 = 1.0
m2 = 2.0
nt = 11
nx = 11

[alpha]
level_count = 3
"#,
    )
    .unwrap();
    let out = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "parse");
}

#[test]
fn unknown_registry_id_exits_three() {
    let out = run(&["reproduce", "--registry", "6"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "parse");
    assert!(err["message"].as_str().unwrap().contains("1 through 5"));
}

#[test]
fn grid_override_must_match_the_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "solve",
        "--registry",
        "1",
        "--grid",
        "21,21,21",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_json(&out)["message"]
        .as_str()
        .unwrap()
        .contains("1D problem"));
}

#[test]
fn envelope_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&[
            "envelope",
            "--registry",
            "2",
            "--grid",
            "41,41",
            "--alpha-levels",
            "5",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv_a = fs::read(a.join("envelope.csv")).unwrap();
    let csv_b = fs::read(b.join("envelope.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "envelope.csv differs between identical runs");
    let region_a = fs::read(a.join("region.json")).unwrap();
    let region_b = fs::read(b.join("region.json")).unwrap();
    assert_eq!(region_a, region_b, "region.json differs between identical runs");

    let header = String::from_utf8_lossy(&csv_a);
    assert!(header.starts_with("t,x,alpha,lower,upper,status\n"));
    for status in ["valid", "invalid"] {
        assert!(
            header.contains(&format!(",{status}\n")),
            "expected some {status} rows"
        );
    }
}

#[test]
fn classify_reports_the_negative_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "classify",
        "--registry",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("verdict: SS_only"), "stdout: {stdout}");
    assert!(stdout.contains("P < 0"), "stdout: {stdout}");

    let doc = read_json(&dir.path().join("classification.json"));
    assert_eq!(doc["verdict"], "SS_only");
    assert_eq!(doc["signs"]["p"]["sign"], "negative");
    assert!(doc["signs"]["p"]["negative_witness"]
        .as_str()
        .unwrap()
        .contains("at t="));
    let notes: Vec<&str> = doc["notes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(notes.iter().any(|n| n.contains("P < 0")), "notes: {notes:?}");
}

#[test]
fn classify_without_any_oracle_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bare.toml");
    // Same problem as registry entry 1 but with the oracle section dropped.
    let text = fuzzpde::registry::source(1)
        .unwrap()
        .split("[oracle]")
        .next()
        .unwrap()
        .to_string();
    fs::write(&path, text).unwrap();
    let out = run(&["classify", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_json(&out)["message"]
        .as_str()
        .unwrap()
        .contains("--oracle"));
}
