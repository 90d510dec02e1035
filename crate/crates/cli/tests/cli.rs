use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tailorder"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Four doses in the published column layout with error correlation
/// increasing by dose.
fn synthetic_csv(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut s = String::from("ALT.B,ALT.M,TBL.B,TBL.M,dose\n");
    for (k, dose) in ["A", "B", "C", "D"].iter().enumerate() {
        let rho = 0.2 + 0.1 * k as f64;
        for _ in 0..120 {
            let (e1, e2): (f64, f64) = (z.sample(&mut rng), z.sample(&mut rng));
            let e2 = rho * e1 + (1.0 - rho * rho).sqrt() * e2;
            let ab = (3.1 + 0.35 * z.sample(&mut rng)).exp();
            let tb = (2.2 + 0.35 * z.sample(&mut rng)).exp();
            let am = (0.5 + 0.85 * ab.ln() + 0.3 * e1).exp();
            let tm = (0.4 + 0.8 * tb.ln() + 0.25 * e2).exp();
            s.push_str(&format!("{ab},{am},{tb},{tm},{dose}\n"));
        }
    }
    let path = dir.join("trial.csv");
    fs::write(&path, s).unwrap();
    path
}

/// One fitted state shared by the tests that only read it.
fn fitted() -> &'static (tempfile::TempDir, PathBuf) {
    static STATE: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    STATE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let csv = synthetic_csv(dir.path());
        let out = dir.path().join("fit");
        let o = run(&["fit", "--input", p(&csv), "--out", p(&out), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let state = out.join("state.json");
        (dir, state)
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_column_exits_with_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "dose,ALT.B,ALT.M,TBL.B\nA,1,2,3\n").unwrap();
    let o = run(&[
        "fit",
        "--input",
        p(&csv),
        "--out",
        p(&dir.path().join("o")),
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("TBL.M"));
}

#[test]
fn seed_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path());
    let o = run(&["fit", "--input", p(&csv), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn fit_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path());
    let out = dir.path().join("fit");
    let fit = || run(&["fit", "--input", p(&csv), "--out", p(&out), "--seed", "7"]);
    assert!(fit().status.success());
    let first = fs::read_to_string(out.join("state.json")).unwrap();
    assert!(fit().status.success());
    let state = out.join("state.json");
    assert!(
        first == fs::read_to_string(&state).unwrap(),
        "state.json changed between runs"
    );
    let s = read_json(&state);
    assert_eq!(s["marginals"].as_object().unwrap().len(), 8);
    assert!(s["metadata"]["version"].as_str().unwrap().starts_with('v'));
}

#[test]
fn config_file_supplies_options() {
    let (dir, _) = fitted();
    let cfg = dir.path().join("cfg.json");
    let csv = dir.path().join("trial.csv");
    let out = dir.path().join("fit-cfg");
    fs::write(
        &cfg,
        format!(
            r#"{{"input": "{}", "out": "{}", "seed": 7, "marg-q": 0.75}}"#,
            p(&csv),
            p(&out)
        ),
    )
    .unwrap();
    let o = run(&["--config", p(&cfg), "fit"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&out.join("state.json"));
    assert_eq!(s["metadata"]["config"]["marg_q"], 0.75);
}

#[test]
fn ordering_test_reports_both_directions() {
    let (dir, state) = fitted();
    let out = dir.path().join("lrt");
    let o = run(&[
        "test-ordering",
        "--state",
        p(state),
        "--out",
        p(&out),
        "--seed",
        "3",
        "--nsim",
        "99",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("ordering_test.json"));
    for d in ["tbl_given_alt", "alt_given_tbl"] {
        let x = &r["directions"][d];
        let p_value = x["p_value"].as_f64().unwrap();
        assert!(p_value > 0.0 && p_value <= 1.0);
        let counts: u64 = x["histogram"]["counts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_u64().unwrap())
            .sum();
        assert_eq!(counts, 99);
    }
}

#[test]
fn predict_includes_the_hys_law_cell() {
    let (dir, state) = fitted();
    let out = dir.path().join("pred");
    let o = run(&[
        "predict",
        "--state",
        p(state),
        "--out",
        p(&out),
        "--seed",
        "5",
        "--nsim",
        "20000",
        "--y-grid",
        "10,60",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("survival_curves.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    // 4 doses x 2 variants x {10, 42, 60}
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().any(|r| r.contains(",108,42,")));
    let j = read_json(&out.join("predict.json"));
    assert_eq!(j["hys_law"].as_array().unwrap().len(), 8);
}

#[test]
fn small_study_writes_every_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    let o = run(&["study", "--out", p(&out), "--seed", "9", "--replicates", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("rmse_ratios.csv")).unwrap();
    let rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    // 10 models x 2 q x 2 levels x 3 comparisons
    assert_eq!(rows, 120);
    let changed = fs::read_to_string(out.join("percent_changed.csv")).unwrap();
    assert_eq!(changed.lines().filter(|l| !l.starts_with('#')).count() - 1, 30);
}

#[test]
fn simulate_writes_exceedances() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let o = run(&[
        "simulate",
        "--family",
        "inverted-logistic",
        "--dep",
        "0.5",
        "--n",
        "50",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 51);
}
