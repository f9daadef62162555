use std::fs;
use std::path::Path;
use std::process::Command;

use olfc_cli::{run_experiment, CliError, Experiment, RunConfig, ScenarioSource};
use olfc_core::scenario::preset_source;

fn olfc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_olfc"))
}

fn write_preset(dir: &Path, preset: &str, edit: impl Fn(String) -> String) -> std::path::PathBuf {
    let path = dir.join(format!("{preset}-edited.toml"));
    fs::write(&path, edit(preset_source(preset).unwrap().to_string())).unwrap();
    path
}

#[test]
fn custom_run_without_disturbance_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_preset(tmp.path(), "two-bus", |s| {
        let cut = s.find("[[disturbance]]").unwrap();
        let rest = &s[cut..];
        let end = rest.find("\n\n").map_or(s.len(), |e| cut + e);
        format!("{}{}", &s[..cut], &s[end..]).replace("duration = 30.0", "duration = 2.0")
    });
    let mut config = RunConfig::new(ScenarioSource::File(path), tmp.path().join("out"));
    config.label = Some("flat".into());
    let summary = run_experiment(&config).unwrap();
    assert!(summary.dir.ends_with("two-bus-edited/flat"));
    let csv = fs::read_to_string(summary.dir.join("trajectory.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let omega_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("omega.")).collect();
    assert_eq!(omega_cols.len(), 2);
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert!(omega_cols.iter().all(|&i| cells[i] == "0"), "{line}");
    }
}

#[test]
fn artifacts_cross_reference_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = RunConfig::new(ScenarioSource::Preset("single-chp".into()), tmp.path());
    config.label = Some("run".into());
    config.seed = Some(42);
    config.decimation = Some(100);
    let summary = run_experiment(&config).unwrap();
    let dir = &summary.dir;
    for f in ["trajectory.csv", "report.txt", "report.csv", "oracle.csv", "scenario.resolved"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.contains("oracle_file: oracle.csv"));
    assert!(report.contains("verdict: converged"));
    let resolved = fs::read_to_string(dir.join("scenario.resolved")).unwrap();
    assert!(resolved.contains("seed = 42"));
    assert!(resolved.contains("decimation = 100"));
    let rows = fs::read_to_string(dir.join("trajectory.csv")).unwrap().lines().count();
    // 30 s at 1e-3 every 100 steps, plus header and final sample.
    assert_eq!(rows, 1 + 300 + 1);
}

#[test]
fn coupling_comparison_writes_both_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = RunConfig::new(ScenarioSource::Preset("two-bus-chp".into()), tmp.path());
    config.experiment = Experiment::CouplingComparison;
    config.label = Some("cmp".into());
    let summary = run_experiment(&config).unwrap();
    assert_eq!(summary.runs.len(), 2);
    for tag in ["e1", "e2"] {
        assert!(summary.dir.join(tag).join("oracle.csv").is_file());
    }
    let report = fs::read_to_string(summary.dir.join("report.txt")).unwrap();
    assert!(report.contains("e1.oracle_file: e1/oracle.csv"));
    assert!(report.contains("e2.chp_enforced: true"));
    assert!(report.contains("diff.d.2"));
}

#[test]
fn damping_sweep_tolerates_instability_outside_range() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = RunConfig::new(ScenarioSource::Preset("two-bus".into()), tmp.path());
    config.experiment = Experiment::DampingSweep;
    config.label = Some("sw".into());
    config.k_grid = Some(vec![1.0, 500.0]);
    config.jobs = 2;
    let summary = run_experiment(&config).unwrap();
    let table = fs::read_to_string(summary.dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1,converged,"));
    assert!(rows[2].starts_with("500,unstable,"), "{}", rows[2]);
    assert!(summary.dir.join("k-1/trajectory.csv").is_file());
    let sub = fs::read_to_string(summary.dir.join("k-500/report.txt")).unwrap();
    assert!(sub.contains("oracle_file: ../oracle.csv"));
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_preset(tmp.path(), "two-bus", |s| s.replacen("damping = 1.0", "damping = 0.0", 1));
    let config = RunConfig::new(ScenarioSource::File(path.clone()), tmp.path());
    let err = run_experiment(&config).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("bus 1"), "{err}");
    assert!(!tmp.path().join("two-bus-edited").exists());

    let out = olfc().arg("--scenario").arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_file_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let config = RunConfig::new(ScenarioSource::File(tmp.path().join("nope.toml")), tmp.path());
    let err = run_experiment(&config).unwrap_err();
    assert!(matches!(err, CliError::Scenario(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn blowup_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_preset(tmp.path(), "paper-bus3", |s| {
        s.replace("kind = \"exact\"", "kind = \"multiplier\", k = 100.0")
    });
    assert!(fs::read_to_string(&path).unwrap().contains("k = 100.0"));
    let out = olfc()
        .args(["--label", "boom", "--out"])
        .arg(tmp.path())
        .arg("--scenario")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(tmp.path().join("paper-bus3-edited/boom/report.txt")).unwrap();
    assert!(report.contains("numerical blowup"));
}

#[test]
fn dump_preset_round_trips() {
    let out = olfc().args(["--dump-preset", "paper-bus3"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), preset_source("paper-bus3").unwrap());

    let out = olfc().args(["--dump-preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = olfc().arg("--list-presets").output().unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().lines().any(|l| l == "two-bus-chp"));
}
