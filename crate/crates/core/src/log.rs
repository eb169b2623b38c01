//! Session logs and their CSV / JSON-lines exports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_COLUMNS: [&str; 8] =
    ["t", "episode", "state", "action", "feedback", "trace", "policy_hash", "eval_return"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub config_digest: String,
    pub seed: u64,
    pub code_version: String,
    pub learner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub episode: u64,
    pub state: usize,
    pub action: usize,
    /// Aggregated feedback applied at this step, if any arrived.
    pub feedback: Option<f64>,
    pub trace: Option<String>,
    /// Digest of `pi(state, .)` after this step's update.
    pub policy_hash: String,
    /// Exact return of the greedy policy from the start state, every K steps.
    pub eval_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub header: LogHeader,
    pub records: Vec<StepRecord>,
    /// Set when the session stopped early; `records` is then partial.
    pub fault: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" => Ok(LogFormat::Jsonl),
            other => Err(Error::UnknownName { kind: "log format", name: other.to_string() }),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: LogHeader,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultLine {
    fault: String,
}

impl SessionLog {
    pub fn new(header: LogHeader) -> Self {
        Self { header, records: Vec::new(), fault: None }
    }

    pub fn push(&mut self, record: StepRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.t < record.t));
        self.records.push(record);
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &HeaderLine { header: self.header.clone() })?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        if let Some(fault) = &self.fault {
            serde_json::to_writer(&mut w, &FaultLine { fault: fault.clone() })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::arg("empty log"))??;
        let header: HeaderLine = serde_json::from_str(&first)?;
        let mut log = SessionLog::new(header.header);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(f) = serde_json::from_str::<FaultLine>(&line) {
                log.fault = Some(f.fault);
            } else {
                log.records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(log)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.write_record([
                r.t.to_string(),
                r.episode.to_string(),
                r.state.to_string(),
                r.action.to_string(),
                opt(r.feedback),
                r.trace.clone().unwrap_or_default(),
                r.policy_hash.clone(),
                opt(r.eval_return),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn export(&self, path: &Path, format: LogFormat) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        match format {
            LogFormat::Csv => self.write_csv(&mut w)?,
            LogFormat::Jsonl => self.write_jsonl(&mut w)?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    /// SHA-256 of the JSON-lines export.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        hex::encode(Sha256::digest(&buf))
    }

    pub fn evaluations(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.records.iter().filter_map(|r| r.eval_return.map(|v| (r.t, v)))
    }
}

/// Short digest of a probability row.
pub fn hash_probs(p: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in p {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SessionLog {
        let mut log = SessionLog::new(LogHeader {
            config_digest: "abc".into(),
            seed: 3,
            code_version: CODE_VERSION.into(),
            learner: "coach".into(),
        });
        log.push(StepRecord {
            t: 0,
            episode: 0,
            state: 17,
            action: 2,
            feedback: Some(-0.125),
            trace: Some("short".into()),
            policy_hash: hash_probs(&[0.25; 4]),
            eval_return: None,
        });
        log.push(StepRecord {
            t: 1,
            episode: 0,
            state: 16,
            action: 0,
            feedback: None,
            trace: None,
            policy_hash: hash_probs(&[0.1, 0.2, 0.3, 0.4]),
            eval_return: Some(-12.345678901234567),
        });
        log
    }

    #[test]
    fn jsonl_round_trip() {
        let mut log = sample();
        log.fault = Some("boom".into());
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        assert_eq!(SessionLog::read_jsonl(&buf[..]).unwrap(), log);
    }

    #[test]
    fn empty_log_csv_is_header_only() {
        let log = SessionLog::new(sample().header);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn exports_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let log = sample();
        for fmt in [LogFormat::Csv, LogFormat::Jsonl] {
            let (a, b) = (dir.path().join("a"), dir.path().join("b"));
            log.export(&a, fmt).unwrap();
            log.export(&b, fmt).unwrap();
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
        assert_eq!(log.digest(), sample().digest());
    }
}
