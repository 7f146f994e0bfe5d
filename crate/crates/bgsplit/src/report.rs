//! Evaluation report files: a structured JSON report (config echo,
//! per-class table, aggregates) plus a flat CSV with 6-decimal fixed-point
//! values, and a per-epoch training-log CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use bgsplit_core::metrics::EvalReport;
use bgsplit_core::trainer::{TrainConfig, TrainLog};

use crate::{Error, Result};

/// The structured report written next to each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: TrainConfig,
    pub report: EvalReport,
}

pub fn report_to_json(report: &ReportFile) -> Result<String> {
    let mut s =
        serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_report_json(path: impl AsRef<Path>, report: &ReportFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report_to_json(report)?).map_err(Error::io(path))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<ReportFile> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&data).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

/// Flat per-class CSV: `class_id,AP,F1,precision,recall,support`.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("class_id,AP,F1,precision,recall,support\n");
    for row in &report.per_class {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            row.category, row.ap, row.f1, row.precision, row.recall, row.support
        )
        .unwrap();
    }
    out
}

pub fn write_report_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report_to_csv(report)).map_err(Error::io(path))
}

/// Per-epoch CSV of a training log. The wall-seconds column reflects the
/// actual run and is not reproducible across invocations.
pub fn train_log_to_csv(log: &TrainLog) -> String {
    let mut out = String::from("epoch,mean_main,mean_aux,mean_total,examples_seen,wall_seconds\n");
    for (i, e) in log.epochs.iter().enumerate() {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{},{:.3}",
            i + 1,
            e.mean_main,
            e.mean_aux,
            e.mean_total,
            e.examples_seen,
            e.wall_seconds
        )
        .unwrap();
    }
    out
}

pub fn write_train_log_csv(path: impl AsRef<Path>, log: &TrainLog) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, train_log_to_csv(log)).map_err(Error::io(path))
}
