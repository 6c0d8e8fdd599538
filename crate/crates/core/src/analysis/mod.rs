//! Error metrics, outlier search, BOPs accounting and report tables.

mod bops;
mod metrics;
mod outliers;
mod report;

pub use bops::{bops, bops_rescale, BopsModel};
pub use metrics::{error_metrics, ErrorAccumulator, ErrorReport, GroupError};
pub use outliers::{drop_activations, find_outliers, DEFAULT_Z_THRESHOLD};
pub use report::{format_db, render_table, AnalysisReport, Provenance, ReportRow};
