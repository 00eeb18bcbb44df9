use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dtrcv::simulator::DgpSpec;

fn dtrcv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtrcv"))
        .args(args)
        .output()
        .expect("run dtrcv")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn simulate(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join("cohort.csv");
    let o = dtrcv(&[
        "simulate",
        "--preset",
        "confounded-feedback",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn write_config(dir: &Path, input: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "input = {:?}\noutput_dir = \"out\"\n[ingest]\nv_columns = [\"male\"]\n\
         [regimes]\ncovariate = \"ph\"\nthresholds = [7.1, 7.2]\n{extra}\n",
        input.to_str().unwrap()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn shipped_presets_match_builtins() {
    for (file, spec) in [
        ("confounded-feedback.toml", DgpSpec::confounded_feedback()),
        ("baseline-only.toml", DgpSpec::baseline_only()),
    ] {
        let text = fs::read_to_string(repo().join("config").join(file)).unwrap();
        let parsed: DgpSpec = toml::from_str(&text).unwrap();
        assert_eq!(parsed, spec, "{file}");
    }
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = fs::read(simulate(dir.path(), 500, 3)).unwrap();
    let b = fs::read(simulate(dir.path(), 500, 3)).unwrap();
    assert_eq!(a, b);
    assert!(dir.path().join("cohort.manifest.json").exists());
    let c = fs::read(simulate(dir.path(), 500, 4)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dtrcv(&["frobnicate"])), 1);
    assert_eq!(code(&dtrcv(&["--version"])), 0);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "n = \"many\"\n").unwrap();
    let out = dir.path().join("x.csv");
    let o = dtrcv(&[
        "simulate",
        "--spec",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
    let o = dtrcv(&[
        "simulate",
        "--preset",
        "nope",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn estimate_writes_curves_for_both_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), 1500, 5);
    let cfg = write_config(dir.path(), &input, "[msm]\nsaturated = false\n");
    let cfg_text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("output_dir", "estimator = \"both\"\noutput_dir");
    fs::write(&cfg, cfg_text).unwrap();
    let o = dtrcv(&["estimate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for (file, tag) in [
        ("curves_aj.csv", "aalen_johansen"),
        ("curves_msm.csv", "msm"),
    ] {
        let text = fs::read_to_string(out.join(file)).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        // Two regimes plus the observed curve, days 0..=10.
        assert_eq!(rows.len(), 3 * 11);
        assert_eq!(rows.iter().filter(|r| r.starts_with("obs,")).count(), 11);
        assert!(rows
            .iter()
            .filter(|r| !r.starts_with("obs,"))
            .all(|r| r.split(',').nth(1) == Some(tag)));
    }
    for f in [
        "weight_diagnostics.csv",
        "proportion_treated.csv",
        "ps_fit.json",
        "manifest_estimate.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

const TABLE: &str = "id,time,treatment,event_death,event_discharge,min_ph_24h\n\
    1,0,0,0,0,7.29\n1,1,0,0,0,7.24\n1,2,1,0,0,7.08\n1,3,1,0,0,7.29\n1,4,1,0,0,7.29\n\
    2,0,0,0,0,7.3\n2,1,0,0,0,7.29\n2,2,1,0,0,7.19\n2,3,1,0,0,7.32\n2,4,1,0,0,7.32\n";

fn table_config(dir: &Path, estimator: &str) -> PathBuf {
    let input = dir.join("table.csv");
    fs::write(&input, TABLE).unwrap();
    let path = dir.join(format!("{estimator}.toml"));
    fs::write(
        &path,
        format!(
            "input = \"table.csv\"\noutput_dir = \"out_{estimator}\"\nestimator = \"{estimator}\"\n\
             [regimes]\ncovariate = \"min_ph_24h\"\nthresholds = [7.1, 7.2]\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn two_patient_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = table_config(dir.path(), "aj");
    let o = dtrcv(&["estimate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("out_aj/curves_aj.csv")).unwrap();
    let ids: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ids.len(), 3 * 6);
    for id in ["min_ph_24h<7.1", "min_ph_24h<7.2", "obs"] {
        assert_eq!(ids.iter().filter(|&&i| i == id).count(), 6);
    }
}

#[test]
fn model_failure_exits_3() {
    // No events at all: the outcome models cannot be fitted.
    let dir = tempfile::tempdir().unwrap();
    let cfg = table_config(dir.path(), "msm");
    let o = dtrcv(&["estimate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("estimate"));
}

#[test]
fn bad_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "id,time,treatment,event_death\n1,0,0,0\n").unwrap();
    let cfg = write_config(dir.path(), &input, "");
    let o = dtrcv(&["estimate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingest"));
}

#[test]
fn crossval_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), 1000, 6);
    let cfg = write_config(dir.path(), &input, "");
    let run = || {
        let o = dtrcv(&["--threads", "2", "crossval", "-c", cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(dir.path().join("out/cv_report_aj.json")).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    let report: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["fold_results"].as_array().unwrap().len(), 5);
}

#[test]
fn too_many_folds_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), 3, 7);
    let cfg = write_config(dir.path(), &input, "[crossval]\nfolds = 5\n");
    let o = dtrcv(&["crossval", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bootstrap_bands_written() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), 800, 8);
    let cfg = write_config(dir.path(), &input, "[bootstrap]\nreplicates = 10\n");
    let o = dtrcv(&["bootstrap", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("out/bands_aj.csv")).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.split(',').all(|f| !f.is_empty()));
}
