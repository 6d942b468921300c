use std::fs;
use std::process::Command;

const CONFIG: &str = r#"
name = "tiny"
sweep_axis = "eta"

[base]
delta1 = 4.0
delta2 = 6.0

[grid]
values = [20.0]

[[scenarios]]
label = "bare"
phonons = false

[truncation]
start = 2
step = 1
max = 2
"#;

fn qdlaser() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qdlaser"))
}

#[test]
fn prints_presets() {
    let out = qdlaser().args(["preset", "fig2", "--print"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("name = \"fig2\"") && text.contains("sweep_axis = \"delta2\""));
    let bad = qdlaser().args(["preset", "nope", "--print"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn unconverged_runs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");

    let strict = qdlaser().arg("run").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(strict.status.code(), Some(2));
    // Results are still written.
    assert!(out.join("tiny_bare.csv").exists() && out.join("tiny_manifest.json").exists());

    let lenient = qdlaser().arg("run").arg(&cfg).arg("--out").arg(&out).arg("--allow-unconverged").output().unwrap();
    assert_eq!(lenient.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("tiny_bare.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("eta [g1],n1 [-]")));
}

#[test]
fn converged_run_succeeds_with_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, CONFIG.replace("values = [20.0]", "values = [0.0]").replace("max = 2", "max = 4")).unwrap();
    let status = qdlaser().args(["--workers", "1", "run"]).arg(&cfg).arg("--out").arg(dir.path()).status().unwrap();
    assert!(status.success());
}

#[test]
fn rejects_malformed_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, CONFIG.replace("values = [20.0]", "values = []")).unwrap();
    let out = qdlaser().arg("run").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn self_check_passes() {
    let out = qdlaser().arg("check").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 14);
    assert!(!text.contains("FAIL"));
}
