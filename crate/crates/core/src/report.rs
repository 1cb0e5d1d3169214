//! Run telemetry: per-round report rows and their CSV / JSON-lines emission.
//!
//! Output is deterministic byte for byte: fixed column order, shortest
//! round-trip float formatting, `\n` line endings.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of run telemetry. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub tau1: u32,
    pub tau2: u32,
    pub eval_loss: f64,
    pub perf: f64,
    pub n_exc: u64,
    pub cum_exc: u64,
    pub qoc: f64,
    pub vartheta: f64,
}

/// One planning event from the adaptive scheduler, describing the plan it
/// chose for `round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerLogEntry {
    pub round: u32,
    pub vartheta: f64,
    pub qoc: f64,
    pub qoc_max: f64,
    pub tau1: u32,
    pub tau2: u32,
    /// Bound value of the chosen plan; `None` when even the fallback plan
    /// overflowed the objective.
    pub objective: Option<f64>,
    pub feasible_set_size: usize,
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    io_err(path, io::Error::other(source))
}

/// Writes reports as RFC-4180 CSV. An empty slice yields a header-only file.
pub fn write_csv(reports: &[RoundReport], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    wtr.write_record([
        "round", "tau1", "tau2", "eval_loss", "perf", "n_exc", "cum_exc", "qoc", "vartheta",
    ])
    .map_err(|e| csv_err(path, e))?;
    for report in reports {
        wtr.serialize(report).map_err(|e| csv_err(path, e))?;
    }
    wtr.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Writes one compact JSON object per line, preceded by an optional header
/// object (used by the runner to echo the scenario config).
pub fn write_jsonl<T: Serialize>(
    header: Option<&serde_json::Value>,
    rows: &[T],
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut emit = |value: String| -> Result<()> {
        out.write_all(value.as_bytes()).map_err(|e| io_err(path, e))?;
        out.write_all(b"\n").map_err(|e| io_err(path, e))
    };
    if let Some(header) = header {
        let line = serde_json::to_string(header).map_err(|e| io_err(path, io::Error::other(e)))?;
        emit(line)?;
    }
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| io_err(path, io::Error::other(e)))?;
        emit(line)?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "round,tau1,tau2,eval_loss,perf,n_exc,cum_exc,qoc,vartheta\n";

    fn sample_reports() -> Vec<RoundReport> {
        vec![
            RoundReport {
                round: 1,
                tau1: 6,
                tau2: 4,
                eval_loss: 0.5,
                perf: -0.5,
                n_exc: 30,
                cum_exc: 30,
                qoc: 0.0125,
                vartheta: 1.0,
            },
            RoundReport {
                round: 2,
                tau1: 12,
                tau2: 2,
                eval_loss: 0.25,
                perf: -0.25,
                n_exc: 18,
                cum_exc: 48,
                qoc: 0.013888888888888888,
                vartheta: 1.0,
            },
        ]
    }

    #[test]
    fn empty_run_yields_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rounds.csv");
        write_csv(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), HEADER);
    }

    #[test]
    fn csv_rows_follow_field_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rounds.csv");
        write_csv(&sample_reports(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), HEADER.trim_end());
        assert_eq!(lines.next().unwrap(), "1,6,4,0.5,-0.5,30,30,0.0125,1.0");
        assert_eq!(lines.next().unwrap(), "2,12,2,0.25,-0.25,18,48,0.013888888888888888,1.0");
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn reemission_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let reports = sample_reports();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_csv(&reports, &a).unwrap();
        write_csv(&reports, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let ja = dir.path().join("a.jsonl");
        let jb = dir.path().join("b.jsonl");
        let header = serde_json::json!({"seed": 7});
        write_jsonl(Some(&header), &reports, &ja).unwrap();
        write_jsonl(Some(&header), &reports, &jb).unwrap();
        assert_eq!(std::fs::read(&ja).unwrap(), std::fs::read(&jb).unwrap());
    }

    #[test]
    fn jsonl_round_trips_and_keeps_header_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rounds.jsonl");
        let reports = sample_reports();
        let header = serde_json::json!({"config": {"seed": 7}});
        write_jsonl(Some(&header), &reports, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let first: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(first, header);
        let parsed: Vec<RoundReport> =
            lines.map(|line| serde_json::from_str(line).unwrap()).collect();
        assert_eq!(parsed, reports);
    }

    #[test]
    fn empty_scheduler_log_is_an_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scheduler.jsonl");
        write_jsonl::<SchedulerLogEntry>(None, &[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"");
    }

    #[test]
    fn scheduler_entry_serializes_missing_objective_as_null() {
        let entry = SchedulerLogEntry {
            round: 3,
            vartheta: 0.0,
            qoc: -0.5,
            qoc_max: 1.0,
            tau1: 24,
            tau2: 1,
            objective: None,
            feasible_set_size: 0,
        };
        let line = serde_json::to_string(&entry).unwrap();
        assert_eq!(
            line,
            "{\"round\":3,\"vartheta\":0.0,\"qoc\":-0.5,\"qoc_max\":1.0,\
             \"tau1\":24,\"tau2\":1,\"objective\":null,\"feasible_set_size\":0}"
        );
    }
}
