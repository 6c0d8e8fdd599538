use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, QuantPolicy};
use super::plan::{AttentionPlan, LayerPlan, OverheadSummary, QuantPlan};
use crate::analysis::{
    format_db, AnalysisReport, ErrorAccumulator, ErrorReport, GroupError, Provenance, ReportRow,
};
use crate::attention::{fake_quantize_attention_stack, matrices, AttentionScores};
use crate::error::{Error, Result};
use crate::groupquant::{apply_group_quant, element_groups, fit_group_scheme, GroupQuantScheme};
use crate::quantizers::RunningMinMax;
use crate::tensorio::{load_calibration_set, CalibrationSet, LayerKind, LayerRecord};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output files of a calibration run.
#[derive(Debug, Clone)]
pub struct CalibrateOutput {
    pub plan: QuantPlan,
    pub plan_path: PathBuf,
    pub scheme_paths: Vec<PathBuf>,
}

/// Fit a plan for every layer of `set`.
pub fn calibrate_plan(set: &CalibrationSet, policy: &QuantPolicy) -> Result<QuantPlan> {
    policy.validate()?;
    let layers = set
        .layers()
        .par_iter()
        .map(|record| calibrate_layer(set, record, policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantPlan {
        provenance: Provenance {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config_hash: policy.hash(),
            calibration_hash: set.digest().to_string(),
        },
        num_timesteps: set.num_timesteps(),
        overhead: OverheadSummary::from_layers(&layers, policy.overhead_bytes_per_param),
        layers,
    })
}

fn calibrate_layer(
    set: &CalibrationSet,
    record: &LayerRecord,
    policy: &QuantPolicy,
) -> Result<LayerPlan> {
    match record.kind() {
        LayerKind::Activation => {
            let a = &policy.activation;
            fit_group_scheme(set, &record.id, a.groups, a.bits, policy.group_config())
                .map(LayerPlan::Activation)
        }
        LayerKind::Attention => {
            let a = &policy.attention;
            let static_scale = if a.dynamic {
                None
            } else {
                Some(static_attention_scale(
                    set,
                    &record.id,
                    a.has_start_token,
                    a.momentum,
                )?)
            };
            Ok(LayerPlan::Attention(AttentionPlan {
                layer: record.id.clone(),
                bits: a.bits,
                has_start_token: a.has_start_token,
                static_scale,
            }))
        }
    }
}

/// Running min/max of the per-dump largest non-start score.
fn static_attention_scale(
    set: &CalibrationSet,
    layer: &str,
    has_start: bool,
    momentum: f64,
) -> Result<f32> {
    let mut tracker = RunningMinMax::new(momentum)?;
    for t in 0..set.num_timesteps() {
        for dump in set.tensors_at(layer, t)? {
            let mut hi = 0.0f32;
            for m in matrices(&dump)? {
                hi = hi.max(AttentionScores::new(m, has_start)?.max_non_start());
            }
            tracker.update_range(0.0, hi);
        }
    }
    let (_, hi) = tracker
        .range()
        .ok_or_else(|| Error::Validation(format!("attention layer '{layer}' has no dumps")))?;
    if hi > 0.0 {
        Ok(hi)
    } else {
        Err(Error::Data(format!(
            "attention layer '{layer}' has no non-start mass"
        )))
    }
}

fn file_stem(layer: &str) -> String {
    layer
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Load the manifest, fit a plan and write `plan.json` plus one scheme file per activation layer.
pub fn run_calibrate(config: &PipelineConfig) -> Result<CalibrateOutput> {
    let set = load_calibration_set(&config.manifest)?;
    let plan = calibrate_plan(&set, &config.policy)?;
    let out = &config.out_dir;
    let schemes_dir = out.join("schemes");
    fs::create_dir_all(&schemes_dir).map_err(|e| Error::io(&schemes_dir, e))?;
    let plan_path = out.join("plan.json");
    plan.write(&plan_path)?;
    let mut scheme_paths = Vec::new();
    for l in &plan.layers {
        if let LayerPlan::Activation(s) = l {
            let p = schemes_dir.join(format!("{}.json", file_stem(&s.layer)));
            s.write(&p)?;
            scheme_paths.push(p);
        }
    }
    Ok(CalibrateOutput {
        plan,
        plan_path,
        scheme_paths,
    })
}

/// Per-(layer, timestep) rows, per-layer totals and the grand total.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<ReportRow>,
    pub layers: Vec<ReportRow>,
    pub total: ErrorReport,
}

fn check_coverage(plan: &QuantPlan, set: &CalibrationSet) -> Result<()> {
    let missing: Vec<&str> = set
        .layers()
        .iter()
        .filter(|l| plan.layer(&l.id).is_none())
        .map(|l| l.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "plan has no entry for layer(s): {}",
            missing.join(", ")
        )));
    }
    Ok(())
}

/// Fake-quantize every dump of `set` under `plan` and measure the error.
pub fn evaluate_plan(
    plan: &QuantPlan,
    set: &CalibrationSet,
    per_group: bool,
) -> Result<Evaluation> {
    check_coverage(plan, set)?;
    let per_layer = set
        .layers()
        .par_iter()
        .map(|record| {
            let lp = plan.layer(&record.id).expect("coverage checked");
            evaluate_layer(lp, record, set, per_group)
                .map_err(|e| e.with_context(&format!("layer '{}'", record.id)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut layers = Vec::new();
    let mut total = ErrorAccumulator::default();
    for (layer_rows, layer_acc, dim, groups, id) in per_layer {
        total.merge(&layer_acc);
        layers.push(ReportRow {
            layer: id,
            timestep: set.num_timesteps(),
            dim,
            groups,
            error: layer_acc.report(),
        });
        rows.extend(layer_rows);
    }
    Ok(Evaluation {
        rows,
        layers,
        total: total.report(),
    })
}

type LayerResult = (
    Vec<ReportRow>,
    ErrorAccumulator,
    String,
    Option<usize>,
    String,
);

fn evaluate_layer(
    lp: &LayerPlan,
    record: &LayerRecord,
    set: &CalibrationSet,
    per_group: bool,
) -> Result<LayerResult> {
    let mut rows = Vec::new();
    let mut layer_acc = ErrorAccumulator::default();
    let (dim, groups) = match (lp, record.kind()) {
        (LayerPlan::Activation(s), LayerKind::Activation) => (s.dim.to_string(), Some(s.groups)),
        (LayerPlan::Attention(_), LayerKind::Attention) => ("attention".to_string(), None),
        _ => {
            return Err(Error::Validation(
                "plan and manifest disagree on the layer kind".into(),
            ))
        }
    };
    if let LayerPlan::Activation(s) = lp {
        if set.num_timesteps() > s.num_timesteps() {
            return Err(Error::Validation(format!(
                "evaluation has {} timesteps, plan has {}",
                set.num_timesteps(),
                s.num_timesteps()
            )));
        }
    }
    for t in 0..set.num_timesteps() {
        let mut acc = ErrorAccumulator::default();
        let mut group_errors = Vec::new();
        match lp {
            LayerPlan::Activation(s) => {
                let mut group_acc = vec![ErrorAccumulator::default(); s.groups];
                for x in set.tensors_at(&record.id, t)? {
                    let q = apply_group_quant(&x, s, t)?;
                    acc.extend(x.data(), q.data());
                    if per_group {
                        let g = element_groups(&x, s)?;
                        for ((&r, &c), &g) in x.data().iter().zip(q.data()).zip(&g) {
                            group_acc[g].push(r, c);
                        }
                    }
                }
                if per_group {
                    group_errors = group_breakdown(s, t, &group_acc);
                }
            }
            LayerPlan::Attention(a) => {
                for x in set.tensors_at(&record.id, t)? {
                    let q =
                        fake_quantize_attention_stack(&x, a.bits, a.has_start_token, a.scale())?;
                    acc.extend(x.data(), q.data());
                }
            }
        }
        layer_acc.merge(&acc);
        let mut error = acc.report();
        error.groups = group_errors;
        rows.push(ReportRow {
            layer: record.id.clone(),
            timestep: t,
            dim: dim.clone(),
            groups,
            error,
        });
    }
    Ok((rows, layer_acc, dim, groups, record.id.clone()))
}

fn group_breakdown(s: &GroupQuantScheme, t: usize, accs: &[ErrorAccumulator]) -> Vec<GroupError> {
    accs.iter()
        .enumerate()
        .map(|(g, a)| GroupError {
            group: g,
            count: a.count,
            mse: a.mse(),
            max_abs_err: a.max_abs_err,
            half_step: s.table[t][g].s as f64 / 2.0,
        })
        .collect()
}

/// Evaluate `plan` on the manifest at `manifest` and write `report.json` and `report.txt`.
pub fn run_apply(
    plan: &QuantPlan,
    manifest: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    per_group: bool,
) -> Result<AnalysisReport> {
    plan.validate()?;
    let set = load_calibration_set(manifest)?;
    let eval = evaluate_plan(plan, &set, per_group)?;
    let report = AnalysisReport {
        provenance: plan.provenance.clone(),
        plan_hash: plan.hash(),
        eval_hash: set.digest().to_string(),
        rows: eval.rows,
        layers: eval.layers,
        total: eval.total,
    };
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.write_json(out.join("report.json"))?;
    let txt = out.join("report.txt");
    fs::write(&txt, report.text_table()).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub layer: String,
    /// One entry per compared plan, in input order.
    pub results: Vec<ErrorReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub eval_hash: String,
    pub layers: Vec<ComparisonRow>,
    pub totals: Vec<ErrorReport>,
}

impl Comparison {
    /// Side-by-side mse / max_abs / sqnr per plan.
    pub fn text_table(&self) -> String {
        let mut header = vec!["layer".to_string()];
        for l in &self.labels {
            header.extend([
                format!("{l}:mse"),
                format!("{l}:max_abs"),
                format!("{l}:sqnr_db"),
            ]);
        }
        let cells = |name: &str, rs: &[ErrorReport]| {
            let mut row = vec![name.to_string()];
            for r in rs {
                row.extend([
                    format!("{:.4e}", r.mse),
                    format!("{:.4e}", r.max_abs_err),
                    format_db(r.sqnr_db),
                ]);
            }
            row
        };
        let mut body: Vec<Vec<String>> = self
            .layers
            .iter()
            .map(|r| cells(&r.layer, &r.results))
            .collect();
        body.push(cells("total", &self.totals));
        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        for row in std::iter::once(&header).chain(&body) {
            for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(out, "{c:<w$}");
                } else {
                    let _ = write!(out, "  {c:>w$}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluate several plans on the same dumps. All plans must cover the same layers.
pub fn compare_plans(plans: &[(String, QuantPlan)], set: &CalibrationSet) -> Result<Comparison> {
    let Some((_, first)) = plans.first() else {
        return Err(Error::Validation("nothing to compare".into()));
    };
    let ids = |p: &QuantPlan| {
        p.layers
            .iter()
            .map(|l| l.layer().to_string())
            .collect::<BTreeSet<_>>()
    };
    let reference = ids(first);
    for (label, p) in plans {
        if ids(p) != reference {
            return Err(Error::Validation(format!(
                "plan '{label}' covers a different set of layers"
            )));
        }
    }
    let evals = plans
        .iter()
        .map(|(label, p)| {
            p.validate()?;
            evaluate_plan(p, set, false).map_err(|e| e.with_context(&format!("plan '{label}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let layers = set
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| ComparisonRow {
            layer: l.id.clone(),
            results: evals.iter().map(|e| e.layers[i].error.clone()).collect(),
        })
        .collect();
    Ok(Comparison {
        labels: plans.iter().map(|(l, _)| l.clone()).collect(),
        eval_hash: set.digest().to_string(),
        layers,
        totals: evals.into_iter().map(|e| e.total).collect(),
    })
}
