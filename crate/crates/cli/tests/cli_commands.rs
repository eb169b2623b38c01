use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use coach_cli::commands::{self, CliError};
use coach_core::config::HarnessConfig;
use coach_core::log::{LogFormat, SessionLog};

const SHORT: &str = r#"
steps = 200
eval_every = 50
[coach]
alpha = 0.2
delay_steps = 0
"#;

const FAULTING: &str = r#"
steps = 400
[coach]
alpha = 1e306
delay_steps = 0
[trainer]
scale = 1e10
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn coach() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coach"))
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            commands::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}

#[test]
fn run_writes_a_log_that_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = HarnessConfig::from_toml(SHORT).unwrap();
    let out = dir.path().join("one.jsonl");
    let summary = commands::run(&cfg, 7, &out, LogFormat::Jsonl).unwrap();
    assert!(summary.starts_with("seed 7: 200 steps"), "{summary}");
    let log = SessionLog::load_jsonl(&out).unwrap();
    assert_eq!(log.records.len(), 200);
    assert!(summary.ends_with(&log.digest()));
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = HarnessConfig::from_toml(SHORT).unwrap();
    let seeds = commands::parse_seeds("0..3").unwrap();
    commands::sweep(&cfg, &seeds, dir.path(), LogFormat::Csv).unwrap();
    for s in 0..3 {
        assert!(dir.path().join(format!("seed-{s}.csv")).exists());
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.starts_with("seed,steps,final_return,best_return,fault,digest"));

    let logs = commands::collect(dir.path()).unwrap();
    assert_eq!(logs.len(), 3);
    let text = commands::report(dir.path()).unwrap();
    assert!(text.contains("3 logs, final greedy return mean"), "{text}");
}

#[test]
fn report_on_an_empty_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(commands::report(dir.path()), Err(CliError::Runtime(_))));
}

#[test]
fn bad_seed_ranges_are_config_errors() {
    for bad in ["", "3..1", "a..b", "1..=x"] {
        assert!(matches!(commands::parse_seeds(bad), Err(CliError::Config(_))), "{bad:?}");
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.toml", SHORT);
    let unknown_key = write(dir.path(), "bad.toml", "steps = 10\nbogus = 1\n");
    let faulting = write(dir.path(), "fault.toml", FAULTING);
    let out = dir.path().join("log.jsonl");

    let status = coach().arg("run").arg("--config").arg(&good).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.exists());

    let status = coach().arg("run").arg("--config").arg(&unknown_key).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let missing = dir.path().join("nope.toml");
    let status = coach().arg("run").arg("--config").arg(&missing).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let fault_out = dir.path().join("fault.jsonl");
    let status = coach().arg("run").arg("--config").arg(&faulting).arg("--out").arg(&fault_out).status().unwrap();
    assert_eq!(status.code(), Some(3));
    // the partial log is still written
    assert!(fault_out.exists());

    let output = coach().args(["experiment", "advantage-identity"]).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stdout).starts_with("PASS advantage-identity"));
}
