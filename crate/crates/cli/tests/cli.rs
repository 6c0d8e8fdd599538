use std::path::Path;
use std::process::{Command, Output};

fn dgq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synthetic(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("suite");
    let o = dgq(&[
        "gen-synthetic",
        "--out",
        p(&out),
        "--layers",
        "3",
        "--timesteps",
        "3",
        "--seed",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("manifest.json")
}

#[test]
fn calibrate_apply_compare_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path());

    let cfg = dir.path().join("layerwise.json");
    std::fs::write(&cfg, r#"{"activation": {"bits": 6, "groups": 1}}"#).unwrap();
    let grouped = dir.path().join("grouped.json");
    std::fs::write(&grouped, r#"{"activation": {"bits": 6, "groups": 8}}"#).unwrap();

    for (name, config) in [("lw", &cfg), ("gw", &grouped)] {
        let out = dir.path().join(name);
        let o = dgq(&[
            "calibrate",
            "--manifest",
            p(&manifest),
            "--config",
            p(config),
            "--out",
            p(&out),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(stdout(&o).contains("3 layers, 3 timesteps"));
        assert!(out.join("plan.json").exists());
        assert!(out.join("schemes").join("act0.json").exists());
    }

    let report_dir = dir.path().join("report");
    let o = dgq(&[
        "apply",
        "--plan",
        p(&dir.path().join("gw/plan.json")),
        "--manifest",
        p(&manifest),
        "--out",
        p(&report_dir),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).starts_with("layer"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 9);
    assert!(report_dir.join("report.txt").exists());

    let plans = format!(
        "{},{}",
        p(&dir.path().join("lw/plan.json")),
        p(&dir.path().join("gw/plan.json"))
    );
    let json = dir.path().join("cmp.json");
    let o = dgq(&[
        "compare",
        "--plans",
        &plans,
        "--manifest",
        p(&manifest),
        "--json",
        p(&json),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let table = stdout(&o);
    assert!(table.contains("lw:mse") && table.contains("gw:mse"));
    assert!(table.lines().last().unwrap().starts_with("total"));
    assert!(json.exists());
}

#[test]
fn bops_both_forms() {
    let o = dgq(&["bops", "--full-bops", "823", "--bw", "8", "--ba", "8"]);
    assert_eq!(o.status.code(), Some(0));
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - 51.4375).abs() < 1e-9);
    let o = dgq(&["bops", "--flops", "10", "--bw", "4", "--ba", "6"]);
    assert_eq!(stdout(&o).trim(), "240");
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path());
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"activation": {"bits": 1}}"#).unwrap();
    let o = dgq(&[
        "calibrate",
        "--manifest",
        p(&manifest),
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bits"));

    std::fs::write(&cfg, "{not json").unwrap();
    let o = dgq(&[
        "calibrate",
        "--manifest",
        p(&manifest),
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let o = dgq(&["bops", "--flops", "10", "--bw", "0", "--ba", "8"]);
    assert_eq!(o.status.code(), Some(2));

    // a plan that lacks one of the manifest's layers
    let out = dir.path().join("plan");
    assert!(
        dgq(&["calibrate", "--manifest", p(&manifest), "--out", p(&out)])
            .status
            .success()
    );
    let plan_path = out.join("plan.json");
    let mut plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&plan_path).unwrap()).unwrap();
    plan["layers"].as_array_mut().unwrap().remove(0);
    std::fs::write(&plan_path, plan.to_string()).unwrap();
    let o = dgq(&[
        "apply",
        "--plan",
        p(&plan_path),
        "--manifest",
        p(&manifest),
        "--out",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("act0"));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = dgq(&[
        "calibrate",
        "--manifest",
        p(&dir.path().join("missing.json")),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_needs_two_plans() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path());
    let out = dir.path().join("a");
    assert!(
        dgq(&["calibrate", "--manifest", p(&manifest), "--out", p(&out)])
            .status
            .success()
    );
    let o = dgq(&[
        "compare",
        "--plans",
        p(&out.join("plan.json")),
        "--manifest",
        p(&manifest),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
