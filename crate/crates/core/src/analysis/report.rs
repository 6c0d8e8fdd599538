use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::ErrorReport;
use crate::error::{Error, Result};

/// One (layer, timestep) line of an analysis report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub layer: String,
    pub timestep: usize,
    /// `channel`, `pixel` or `attention`.
    pub dim: String,
    #[serde(rename = "K")]
    pub groups: Option<usize>,
    #[serde(flatten)]
    pub error: ErrorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub config_hash: String,
    pub calibration_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub provenance: Provenance,
    /// Hash of the plan that was applied.
    pub plan_hash: String,
    pub eval_hash: String,
    pub rows: Vec<ReportRow>,
    /// Per-layer totals over every timestep.
    pub layers: Vec<ReportRow>,
    pub total: ErrorReport,
}

impl AnalysisReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn text_table(&self) -> String {
        render_table(&self.rows)
    }
}

pub fn format_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Aligned plain-text table with columns layer, timestep, dim, K, mse, max_abs, sqnr_db.
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["layer", "timestep", "dim", "K", "mse", "max_abs", "sqnr_db"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.layer.clone(),
                r.timestep.to_string(),
                r.dim.clone(),
                r.groups.map_or("-".into(), |k| k.to_string()),
                format!("{:.4e}", r.error.mse),
                format!("{:.4e}", r.error.max_abs_err),
                format_db(r.error.sqnr_db),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
            // text columns left, numbers right
            if i == 0 || i == 2 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "{c:>w$}");
            }
            out.push_str(if i + 1 == row.len() { "\n" } else { "  " });
        }
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(
        &mut out,
        &rule.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    for row in &cells {
        line(
            &mut out,
            &row.iter().map(String::as_str).collect::<Vec<_>>(),
        );
    }
    out
}
