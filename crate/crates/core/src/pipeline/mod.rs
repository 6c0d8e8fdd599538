//! End-to-end calibrate / apply / compare over manifest-indexed dumps.

mod config;
mod plan;
mod run;
mod synthetic;

pub use config::{ActivationPolicy, AttentionPolicy, MetricsPolicy, PipelineConfig, QuantPolicy};
pub use plan::{AttentionPlan, LayerOverhead, LayerPlan, OverheadSummary, QuantPlan};
pub use run::{
    calibrate_plan, compare_plans, evaluate_plan, run_apply, run_calibrate, CalibrateOutput,
    Comparison, ComparisonRow, Evaluation, TOOLKIT_VERSION,
};
pub use synthetic::{generate_synthetic, SyntheticLayer, SyntheticSpec, SyntheticSuite};
