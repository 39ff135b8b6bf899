//! Report emission: score records as CSV, full reports and probe tables as
//! JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use smash_core::search::{ProbeTable, ScoreRecord, SearchReport};

use crate::error::{io_err, CliError, Result};

/// The CSV projection of a score record. Architectures live in the JSON
/// report; the CSV carries the sortable columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub id: u64,
    pub smash_error: f64,
    pub true_error: Option<f64>,
    pub param_count: u64,
}

impl From<&ScoreRecord> for CsvRow {
    fn from(r: &ScoreRecord) -> Self {
        CsvRow {
            id: r.id,
            smash_error: r.smash_error,
            true_error: r.true_error,
            param_count: r.param_count,
        }
    }
}

pub fn write_records_csv(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Other(e.to_string()))?;
    for r in records {
        w.serialize(CsvRow::from(r)).map_err(|e| CliError::Other(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Other(e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<CsvRow>, _>>()
        .map_err(|e| CliError::Other(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_report_json(path: &Path) -> Result<SearchReport> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Other(e.to_string()))
}

pub fn write_probe_csv(path: &Path, table: &ProbeTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Other(e.to_string()))?;
    w.write_record(["arch_index", "mode", "clean", "corrupted", "delta", "changed"])
        .map_err(|e| CliError::Other(e.to_string()))?;
    for row in &table.rows {
        w.write_record([
            row.arch_index.to_string(),
            format!("{:?}", row.mode),
            row.clean.to_string(),
            row.corrupted.to_string(),
            row.delta.to_string(),
            row.changed.to_string(),
        ])
        .map_err(|e| CliError::Other(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Human summary of a report for the `report` subcommand.
pub fn summarize(report: &SearchReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("records: {}\n", report.records.len()));
    let retrained = report.records.iter().filter(|r| r.true_error.is_some()).count();
    out.push_str(&format!("retrained: {retrained}\n"));
    if let (Some(s), Some(p)) = (report.spearman, report.pearson) {
        out.push_str(&format!("spearman rho: {s:.4}\npearson r: {p:.4}\n"));
    }
    if let Some(p) = report.p_one_sided {
        out.push_str(&format!("one-sided p: {p:.4}\n"));
    }
    if let (Some(m), Some(b)) = (report.fit_slope, report.fit_intercept) {
        out.push_str(&format!("least-squares fit: true = {m:.4} * score + {b:.4}\n"));
    }
    out.push_str("best candidates (score ascending):\n");
    for r in report.records.iter().take(5) {
        out.push_str(&format!(
            "  id {:>4}  score {:.4}  true {}  params {}\n",
            r.id,
            r.smash_error,
            r.true_error.map_or("-".to_string(), |t| format!("{t:.4}")),
            r.param_count
        ));
    }
    out
}
