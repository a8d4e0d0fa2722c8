//! End-to-end runs of the `operlab` binary.

use std::path::Path;
use std::process::Command;

fn operlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_operlab"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn audit_runs_and_exits_zero_even_with_failing_claims() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "zoo": [{"kind": "shift", "n": 8}],
            "claims": ["2.16", "2.32"],
            "samples": 50,
            "master_seed": 7
        }"#,
    );
    let out = dir.path().join("out");
    let result = operlab()
        .args(["audit", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("claim 2.16"));
    assert!(stdout.contains("claim 2.32"));
    assert!(out.join("audit.csv").exists());
    assert!(out.join("summary.json").exists());

    let csv = std::fs::read_to_string(out.join("audit.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("2.32") && l.contains(",fail,")));
}

#[test]
fn seed_override_changes_sampling_but_not_structure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "zoo": [{"kind": "shift", "n": 6}],
            "claims": ["2.13"],
            "samples": 20,
            "master_seed": 7
        }"#,
    );
    let run = |out: &Path, seed: &str| {
        let result = operlab()
            .args(["audit", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert!(result.status.success());
        std::fs::read_to_string(out.join("audit.csv")).unwrap()
    };
    let a = run(&dir.path().join("a"), "1");
    let b = run(&dir.path().join("b"), "1");
    let c = run(&dir.path().join("c"), "2");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn feasibility_reports_and_grid_oracle_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "zoo": [{"kind": "shift", "n": 8}],
            "windows": "diagonal",
            "master_seed": 7
        }"#,
    );
    let out = dir.path().join("out");
    let result = operlab()
        .args(["feasibility", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--grid-oracle")
        .output()
        .unwrap();
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("feasible"));
    assert!(stdout.contains("oracle_agreement=true"));
    let report_path = out.join("report-shift_n8-floor_defect.json");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(report["verdict"], "feasible");
    assert_eq!(report["residual"], 0.0);
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"zoo": [], "master_seed": 1}"#);
    let result = operlab().args(["audit", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(result.status.code(), Some(2));

    let missing = operlab()
        .args(["audit", "--config", "/nonexistent/cfg.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn zoo_list_names_every_kind() {
    let result = operlab().args(["zoo", "list"]).output().unwrap();
    assert!(result.status.success());
    let stdout = String::from_utf8_lossy(&result.stdout);
    for kind in [
        "shift",
        "weighted_shift",
        "jordan",
        "diagonal",
        "random_ginibre",
        "random_hessenberg",
        "from_file",
    ] {
        assert!(stdout.contains(kind), "missing {kind}");
    }
}

#[test]
fn verify_golden_passes() {
    let dir = tempfile::tempdir().unwrap();
    let result = operlab()
        .args(["verify-golden", "--out"])
        .arg(dir.path().join("g"))
        .output()
        .unwrap();
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("audit.csv: match"));
    assert!(stdout.contains("summary.json: match"));
}

#[test]
fn sweep_writes_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "zoo": [{"kind": "random_hessenberg", "n": 10, "seed": 3}],
            "claims": ["2.44"],
            "sweep": {"seeds": 3},
            "master_seed": 7
        }"#,
    );
    let out = dir.path().join("out");
    let result = operlab()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(doc["operators"].as_array().unwrap().len(), 3);
}
