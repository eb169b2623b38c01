//! The subcommands behind the `coach` binary.

use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use coach_core::config::HarnessConfig;
use coach_core::log::{LogFormat, SessionLog};
use coach_core::session::run_session;
use coach_service::realtime::{LoopHandle, LoopOptions};
use coach_service::session::Session;
use rayon::prelude::*;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad or unreadable configuration, bad arguments: exit 2.
    Config(String),
    /// The run itself failed (learner fault, IO): exit 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn load_config(path: &Path) -> CliResult<HarnessConfig> {
    HarnessConfig::load(path).map_err(|e| CliError::Config(e.to_string()))
}

fn extension(format: LogFormat) -> &'static str {
    match format {
        LogFormat::Csv => "csv",
        LogFormat::Jsonl => "jsonl",
    }
}

/// Final and best evaluation return of a log.
fn returns(log: &SessionLog) -> (Option<f64>, Option<f64>) {
    let evals: Vec<f64> = log.evaluations().map(|(_, r)| r).collect();
    (evals.last().copied(), evals.iter().copied().reduce(f64::max))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |r| format!("{r:.4}"))
}

/// `coach run`: one seeded session, exported to `out`.
pub fn run(config: &HarnessConfig, seed: u64, out: &Path, format: LogFormat) -> CliResult<String> {
    let log = run_session(config, seed).map_err(|e| CliError::Config(e.to_string()))?;
    log.export(out, format).map_err(|e| CliError::Runtime(e.to_string()))?;
    let (last, _) = returns(&log);
    let summary = format!(
        "seed {seed}: {} steps, final greedy return {}, digest {}",
        log.records.len(),
        fmt_opt(last),
        log.digest()
    );
    match log.fault {
        Some(f) => Err(CliError::Runtime(format!("{summary}; session stopped early: {f}"))),
        None => Ok(summary),
    }
}

/// Parses `a..b` (exclusive) or `a..=b`.
pub fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::Config(format!("seed range `{text}` is not of the form a..b or a..=b"));
    let (a, b, inclusive) = if let Some((a, b)) = text.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = text.split_once("..") {
        (a, b, false)
    } else {
        let one: u64 = text.trim().parse().map_err(|_| bad())?;
        return Ok(vec![one]);
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// `coach sweep`: one session per seed in parallel, logs plus `summary.csv`.
pub fn sweep(config: &HarnessConfig, seeds: &[u64], out_dir: &Path, format: LogFormat) -> CliResult<String> {
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", out_dir.display())))?;
    let rows: Vec<CliResult<(u64, SessionLog)>> = seeds
        .par_iter()
        .map(|&seed| {
            let log = run_session(config, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
            let path = out_dir.join(format!("seed-{seed}.{}", extension(format)));
            log.export(&path, format).map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok((seed, log))
        })
        .collect();

    let mut w = csv::Writer::from_path(out_dir.join("summary.csv")).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record(["seed", "steps", "final_return", "best_return", "fault", "digest"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut faults = 0;
    for row in &rows {
        let (seed, log) = row.as_ref().map_err(Clone::clone)?;
        let (last, best) = returns(log);
        faults += usize::from(log.fault.is_some());
        w.write_record([
            seed.to_string(),
            log.records.len().to_string(),
            last.map(|v| v.to_string()).unwrap_or_default(),
            best.map(|v| v.to_string()).unwrap_or_default(),
            log.fault.clone().unwrap_or_default(),
            log.digest(),
        ])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    let summary = format!("{} sessions written to {}", rows.len(), out_dir.display());
    if faults > 0 {
        return Err(CliError::Runtime(format!("{summary}; {faults} stopped early")));
    }
    Ok(summary)
}

/// One log as seen by `report`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSummary {
    pub file: String,
    pub seed: Option<u64>,
    pub steps: usize,
    pub final_return: Option<f64>,
    pub best_return: Option<f64>,
    pub fault: bool,
}

fn summarize_csv(path: &Path) -> CliResult<LogSummary> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let headers = r.headers().map_err(|e| CliError::Runtime(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "eval_return")
        .ok_or_else(|| CliError::Runtime(format!("{}: no eval_return column", path.display())))?;
    let mut steps = 0;
    let mut evals = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Runtime(e.to_string()))?;
        steps += 1;
        if let Some(v) = rec.get(col).filter(|v| !v.is_empty()) {
            evals.push(v.parse::<f64>().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?);
        }
    }
    Ok(LogSummary {
        file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        seed: None,
        steps,
        final_return: evals.last().copied(),
        best_return: evals.iter().copied().reduce(f64::max),
        fault: false,
    })
}

/// Reads every session log (`*.jsonl`, `*.csv` except `summary.csv`) in `dir`.
pub fn collect(dir: &Path) -> CliResult<Vec<LogSummary>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n != "summary.csv"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        match p.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => {
                let log = SessionLog::load_jsonl(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
                let (last, best) = returns(&log);
                out.push(LogSummary {
                    file: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                    seed: Some(log.header.seed),
                    steps: log.records.len(),
                    final_return: last,
                    best_return: best,
                    fault: log.fault.is_some(),
                });
            }
            Some("csv") => out.push(summarize_csv(&p)?),
            _ => {}
        }
    }
    Ok(out)
}

/// `coach report`: plain-text table plus mean and spread of final returns.
pub fn report(dir: &Path) -> CliResult<String> {
    let logs = collect(dir)?;
    if logs.is_empty() {
        return Err(CliError::Runtime(format!("no session logs in {}", dir.display())));
    }
    let mut text = format!("{:<24} {:>6} {:>8} {:>12} {:>12} {:>6}\n", "file", "seed", "steps", "final", "best", "fault");
    for l in &logs {
        text.push_str(&format!(
            "{:<24} {:>6} {:>8} {:>12} {:>12} {:>6}\n",
            l.file,
            l.seed.map_or_else(|| "-".to_string(), |s| s.to_string()),
            l.steps,
            fmt_opt(l.final_return),
            fmt_opt(l.best_return),
            if l.fault { "yes" } else { "" }
        ));
    }
    let finals: Vec<f64> = logs.iter().filter_map(|l| l.final_return).collect();
    if !finals.is_empty() {
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let sd = (finals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        text.push_str(&format!("{} logs, final greedy return mean {mean:.4}, sd {sd:.4}\n", logs.len()));
    }
    Ok(text)
}

/// `coach serve`: runs the decision loop and the WebSocket endpoint until
/// Ctrl-C.
pub fn serve(config: &HarnessConfig, listen: SocketAddr) -> CliResult<()> {
    let session = Session::new(config).map_err(|e| CliError::Config(e.to_string()))?;
    let period = Duration::from_millis(config.service.period_ms);
    let handle = LoopHandle::spawn(session, LoopOptions::with_period(period));
    let client = handle.client();
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let (listener, addr) =
            coach_service::server::bind(listen).await.map_err(|e| CliError::Runtime(format!("{listen}: {e}")))?;
        log::info!("serving ws://{addr}/ws every {} ms", period.as_millis());
        coach_service::server::serve(listener, client, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    let stats = handle.client().stats();
    log::info!("stopped after {} cycles, {} overruns", stats.cycles, stats.overruns);
    handle.stop();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a..b").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Runtime(String::new()).exit_code(), 3);
    }
}
