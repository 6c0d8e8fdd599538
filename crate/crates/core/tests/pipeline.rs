use dgq_core::analysis::ErrorAccumulator;
use dgq_core::attention::fake_quantize_attention_stack;
use dgq_core::groupquant::{apply_group_quant, fit_group_scheme, GroupConfig};
use dgq_core::pipeline::{
    calibrate_plan, compare_plans, evaluate_plan, generate_synthetic, run_apply, run_calibrate,
    LayerPlan, PipelineConfig, QuantPlan, QuantPolicy, SyntheticSpec, TOOLKIT_VERSION,
};
use dgq_core::quantizers::Denominator;
use dgq_core::tensorio::{load_calibration_set, CalibrationSet};

fn suite() -> (tempfile::TempDir, CalibrationSet) {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = generate_synthetic(dir.path(), SyntheticSpec::default()).unwrap();
    let set = load_calibration_set(manifest).unwrap();
    (dir, set)
}

fn policy(bits: u32, groups: usize) -> QuantPolicy {
    let mut p = QuantPolicy::default();
    p.activation.bits = bits;
    p.activation.groups = groups;
    p
}

#[test]
fn bundled_plan_shape_and_overhead() {
    let (_d, set) = suite();
    let plan = calibrate_plan(&set, &QuantPolicy::default()).unwrap();
    assert_eq!(plan.layers.len(), 3);
    assert_eq!(plan.num_timesteps, 4);
    // two activation layers, each T=4 x K=8 x 4 bytes x 2 arrays
    assert_eq!(plan.overhead.total_bytes, 2 * 4 * 8 * 4 * 2);
    assert!(matches!(plan.layers[2], LayerPlan::Attention(_)));
    assert_eq!(plan.provenance.toolkit_version, TOOLKIT_VERSION);
    assert_eq!(plan.provenance.calibration_hash, set.digest());
    assert_eq!(plan.provenance.config_hash, QuantPolicy::default().hash());
}

#[test]
fn sixteen_bits_is_near_lossless() {
    let (_d, set) = suite();
    let plan = calibrate_plan(&set, &policy(16, 16)).unwrap();
    let eval = evaluate_plan(&plan, &set, false).unwrap();
    for row in eval.rows.iter().filter(|r| r.dim != "attention") {
        assert!(
            row.error.sqnr_db >= 60.0,
            "{} t={}: {}",
            row.layer,
            row.timestep,
            row.error.sqnr_db
        );
    }
}

#[test]
fn own_calibration_data_respects_group_steps() {
    let (_d, set) = suite();
    for (den, factor) in [(Denominator::Pow2MinusOne, 1.0), (Denominator::Pow2, 2.0)] {
        let mut p = policy(6, 8);
        p.activation.denominator = den;
        let plan = calibrate_plan(&set, &p).unwrap();
        let eval = evaluate_plan(&plan, &set, true).unwrap();
        for row in eval.rows.iter().filter(|r| r.dim != "attention") {
            assert_eq!(row.error.groups.len(), 8);
            for g in &row.error.groups {
                // ulp at the largest synthetic magnitude (about 50)
                let ulp = 4.0 * f32::EPSILON as f64 * 64.0;
                assert!(
                    g.max_abs_err <= factor * g.half_step + ulp,
                    "{den:?} {} t={} group {}: {} > {}",
                    row.layer,
                    row.timestep,
                    g.group,
                    g.max_abs_err,
                    g.half_step
                );
            }
        }
    }
}

#[test]
fn start_column_is_untouched() {
    let (_d, set) = suite();
    for t in 0..set.num_timesteps() {
        for x in set.tensors_at("attn2", t).unwrap() {
            let q = fake_quantize_attention_stack(&x, 8, true, dgq_core::AttentionScale::Dynamic)
                .unwrap();
            let n_k = x.shape()[2];
            for (i, (a, b)) in x.data().iter().zip(q.data()).enumerate() {
                if i % n_k == 0 {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}

#[test]
fn grouping_never_loses_to_one_group() {
    let (_d, set) = suite();
    let cfg = GroupConfig::default();
    for id in ["act0", "act1"] {
        let one = fit_group_scheme(&set, id, 1, 6, cfg).unwrap();
        let eight = fit_group_scheme(&set, id, 8, 6, cfg).unwrap();
        for t in 0..set.num_timesteps() {
            for x in set.tensors_at(id, t).unwrap() {
                let mse = |s| {
                    let mut acc = ErrorAccumulator::default();
                    acc.extend(x.data(), apply_group_quant(&x, s, t).unwrap().data());
                    acc.mse()
                };
                assert!(mse(&eight) <= mse(&one), "{id} t={t}");
            }
        }
    }
}

#[test]
fn sixteen_groups_no_worse_than_eight() {
    let (_d, set) = suite();
    let mse = |k| {
        evaluate_plan(&calibrate_plan(&set, &policy(6, k)).unwrap(), &set, false)
            .unwrap()
            .total
            .mse
    };
    assert!(mse(16) <= mse(8));
}

#[test]
fn static_attention_scale() {
    let (_d, set) = suite();
    let mut p = QuantPolicy::default();
    p.attention.dynamic = false;
    let plan = calibrate_plan(&set, &p).unwrap();
    let LayerPlan::Attention(a) = &plan.layers[2] else {
        panic!("attention entry")
    };
    let s = a.static_scale.unwrap();
    assert!(s > 0.0 && s < 0.5);
    let eval = evaluate_plan(&plan, &set, false).unwrap();
    assert!(eval.layers[2].error.mse.is_finite());
}

#[test]
fn compare_identical_plans_gives_identical_columns() {
    let (_d, set) = suite();
    let plan = calibrate_plan(&set, &QuantPolicy::default()).unwrap();
    let cmp = compare_plans(&[("a".into(), plan.clone()), ("b".into(), plan)], &set).unwrap();
    for row in &cmp.layers {
        assert_eq!(row.results[0], row.results[1]);
    }
    assert_eq!(cmp.totals[0], cmp.totals[1]);
}

#[test]
fn compare_rejects_mismatched_layers() {
    let (_d, set) = suite();
    let plan = calibrate_plan(&set, &QuantPolicy::default()).unwrap();
    let mut short = plan.clone();
    short.layers.pop();
    let err = compare_plans(&[("a".into(), plan), ("b".into(), short)], &set).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn apply_requires_every_layer_and_records_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = generate_synthetic(dir.path().join("s"), SyntheticSpec::default()).unwrap();
    let out = run_calibrate(&PipelineConfig::new(
        &manifest,
        dir.path().join("cal"),
        QuantPolicy::default(),
    ))
    .unwrap();
    let plan = QuantPlan::read(&out.plan_path).unwrap();
    assert_eq!(plan, out.plan);
    assert_eq!(out.scheme_paths.len(), 2);

    let report = run_apply(&plan, &manifest, dir.path().join("rep"), true).unwrap();
    assert_eq!(report.plan_hash, plan.hash());
    assert_eq!(
        report.eval_hash,
        load_calibration_set(&manifest).unwrap().digest()
    );
    assert_eq!(report.rows.len(), 12);
    let text = std::fs::read_to_string(dir.path().join("rep/report.txt")).unwrap();
    assert_eq!(text.lines().count(), 14);

    let mut missing = plan.clone();
    missing.layers.remove(1);
    let err = run_apply(&missing, &manifest, dir.path().join("rep2"), true).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("act1"));
}
