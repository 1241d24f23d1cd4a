//! Rendering reports as tables.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::pipeline::VarianceRow;
use crate::error::{Error, Result};
use crate::estimators::EvidenceReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableFormat {
    Text,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::config("format", format!("unknown table format `{other}`"))),
        }
    }
}

/// One cell of an evidence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub estimator: String,
    pub model: String,
    pub log_evidence: f64,
    pub mc_error: Option<f64>,
}

impl From<&EvidenceReport> for TableEntry {
    fn from(r: &EvidenceReport) -> Self {
        Self {
            estimator: r.estimator.clone(),
            model: r.model.clone(),
            log_evidence: r.log_evidence,
            mc_error: r.mc_error,
        }
    }
}

fn ordered_unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Renders entries with estimators as rows and models as columns. Text
/// output puts MC errors in parentheses on the line below each estimate.
pub fn render_entries(entries: &[TableEntry], format: TableFormat, decimals: usize) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("estimator,model,log_evidence,mc_error\n");
            for e in entries {
                let err = e.mc_error.map(|v| format!("{v:.decimals$}")).unwrap_or_default();
                let _ = writeln!(out, "{},{},{:.decimals$},{err}", e.estimator, e.model, e.log_evidence);
            }
        }
        TableFormat::Text => {
            let models = ordered_unique(entries.iter().map(|e| e.model.as_str()));
            let estimators = ordered_unique(entries.iter().map(|e| e.estimator.as_str()));
            let label_w = estimators.iter().map(|s| s.len()).max().unwrap_or(0).max("estimator".len());
            let col_w = decimals + 8;
            let _ = write!(out, "{:<label_w$}", "estimator");
            for m in &models {
                let _ = write!(out, "  {m:>col_w$}");
            }
            out.push('\n');
            for est in &estimators {
                let cell = |m: &str| entries.iter().find(|e| e.estimator == *est && e.model == m);
                let _ = write!(out, "{est:<label_w$}");
                for m in &models {
                    let s = cell(m).map(|e| format!("{:.decimals$}", e.log_evidence)).unwrap_or_default();
                    let _ = write!(out, "  {s:>col_w$}");
                }
                out.push('\n');
                if models.iter().any(|m| cell(m).is_some_and(|e| e.mc_error.is_some())) {
                    let _ = write!(out, "{:<label_w$}", "");
                    for m in &models {
                        let s = cell(m)
                            .and_then(|e| e.mc_error)
                            .map(|v| format!("({v:.decimals$})"))
                            .unwrap_or_default();
                        let _ = write!(out, "  {s:>col_w$}");
                    }
                    out.push('\n');
                }
            }
        }
    }
    out
}

pub fn emit_table(reports: &[EvidenceReport], format: TableFormat, decimals: usize) -> String {
    let entries: Vec<TableEntry> = reports.iter().map(TableEntry::from).collect();
    render_entries(&entries, format, decimals)
}

/// Parses the CSV form produced by [`render_entries`].
pub fn parse_table_csv(text: &str) -> Result<Vec<TableEntry>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["estimator", "model", "log_evidence", "mc_error"] {
        return Err(Error::Data(format!("unexpected table header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Data(format!("`{s}` is not a number"))) };
        out.push(TableEntry {
            estimator: rec[0].to_string(),
            model: rec[1].to_string(),
            log_evidence: num(&rec[2])?,
            mc_error: if rec[3].is_empty() { None } else { Some(num(&rec[3])?) },
        });
    }
    Ok(out)
}

/// Errors at `N` and `2N` with the `1/sqrt(2)` expectation.
pub fn emit_variance_table(rows: &[VarianceRow], format: TableFormat, decimals: usize) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("model,estimator,n,mc_error_n,mc_error_2n,expected_2n,ratio,flagged\n");
            for r in rows {
                let d = &r.diagnostic;
                let _ = writeln!(
                    out,
                    "{},{},{},{:.decimals$},{:.decimals$},{:.decimals$},{:.3},{}",
                    r.model,
                    r.estimator,
                    d.n,
                    d.mc_error_n,
                    d.mc_error_2n,
                    d.mc_error_n * d.expected_ratio,
                    d.ratio,
                    d.flagged
                );
            }
        }
        TableFormat::Text => {
            let _ = writeln!(
                out,
                "{:<12} {:<20} {:>8} {:>12} {:>12} {:>12} {:>7}",
                "model", "estimator", "N", "error(N)", "error(2N)", "expected", "ratio"
            );
            for r in rows {
                let d = &r.diagnostic;
                let _ = writeln!(
                    out,
                    "{:<12} {:<20} {:>8} {:>12.decimals$} {:>12.decimals$} {:>12} {:>7.3}{}",
                    r.model,
                    r.estimator,
                    d.n,
                    d.mc_error_n,
                    d.mc_error_2n,
                    format!("({:.decimals$})", d.mc_error_n * d.expected_ratio),
                    d.ratio,
                    if d.flagged { "  flagged" } else { "" }
                );
            }
        }
    }
    out
}
