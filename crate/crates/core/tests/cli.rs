use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const GRID: &str = "1e3:1e9:120";

fn eprnet(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eprnet"));
    cmd.args(args).env_remove("EPRNET_OUT");
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_shows_every_builtin() {
    let o = eprnet(&["list"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in [
        "fig1-ideal",
        "fig2-delays",
        "fig3-amploss",
        "fig5-loss3",
        "fig7-loss5",
        "fig19-heavyloss",
        "fig20-heavyloss-delays",
    ] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn dependent_scenario_bootstraps_the_reference_controller() {
    let dir = tempfile::tempdir().unwrap();
    let o = eprnet(&["--scenario", "fig3", "--grid", GRID], Some(dir.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reference = dir.path().join("fig1-ideal");
    assert!(reference.join("controller.json").is_file());
    let run = dir.path().join("fig3-amploss");
    for f in ["uncontrolled.csv", "controlled.csv", "stability.json", "summary.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert!(!run.join("controller.json").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["stability"]["verdict"], "stable");
    assert_eq!(summary["grid_points"], 120);
    let csv = fs::read_to_string(run.join("controlled.csv")).unwrap();
    assert_eq!(csv.lines().count(), 121);
}

#[test]
fn csv_output_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = eprnet(&["--scenario", "fig1", "--grid", GRID], Some(dir.path()));
        assert!(o.status.success());
    }
    let sequential = tempfile::tempdir().unwrap();
    let o = eprnet(&["--scenario", "fig1", "--grid", GRID, "--sequential"], Some(sequential.path()));
    assert!(o.status.success());
    for f in ["uncontrolled.csv", "controlled.csv", "controller.json", "stability.json"] {
        let first = fs::read(a.path().join("fig1-ideal").join(f)).unwrap();
        assert_eq!(first, fs::read(b.path().join("fig1-ideal").join(f)).unwrap(), "{f}");
        assert_eq!(first, fs::read(sequential.path().join("fig1-ideal").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_eprnet"))
        .args(["--scenario", "fig1", "--grid", GRID, "--controller", "none"])
        .env("EPRNET_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let run = dir.path().join("fig1-ideal");
    assert!(run.join("uncontrolled.csv").is_file());
    assert!(!run.join("controlled.csv").exists());
}

#[test]
fn config_scenarios_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("net.toml");
    fs::write(
        &cfg,
        r#"
[[scenario]]
name = "half-loss"
controller = "synth"
grid = "1e3:1e8:60"
[scenario.params]
chi = 5e5
alpha = 0.99
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = eprnet(&["--config", cfg.to_str().unwrap(), "--scenario", "half-loss"], Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("half-loss").join("controller.json").is_file());
    assert!(stdout(&o).contains("half-loss"));
}

#[test]
fn unknown_scenario_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = eprnet(&["--scenario", "fig99"], Some(dir.path()));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown scenario"));
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .map(|d| d.flatten().map(|e| e.file_name()).collect())
        .unwrap_or_default();
    assert!(leftovers.iter().all(|n| !n.to_string_lossy().ends_with(".partial")));
}

#[test]
fn bad_grid_is_rejected() {
    let o = eprnet(&["--scenario", "fig1", "--grid", "1e9:1e3:10"], None);
    assert!(!o.status.success());
}
