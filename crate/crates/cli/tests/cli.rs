mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{first_unc, fixture, pipeline_args, write};
use serde_json::Value;
use uncx_cli::commands::{cmd_filter, cmd_pipeline, FilterArgs, FILTER_CURVES, FILTER_FILE};

fn uncx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uncx")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_code(out: &Output) -> String {
    let body: Value = serde_json::from_slice(&out.stderr).unwrap();
    body["code"].as_str().unwrap().to_string()
}

#[test]
fn commands_write_their_reports() {
    let f = fixture();
    let unc = first_unc(&f.run).to_string();

    let out = uncx(&["filter", "--out", s(&f.run), "--flags", &unc, "--methods", "OursNMF,BaselineTotal"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let filter = json(&f.run.join(FILTER_FILE));
    let methods = filter["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 2);
    let candidates = filter["candidates"].as_u64().unwrap() as usize;
    for m in methods {
        let mut ranking: Vec<&str> = m["ranking"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        assert_eq!(ranking.len(), candidates);
        ranking.sort_unstable();
        ranking.dedup();
        assert_eq!(ranking.len(), candidates);
    }
    let csv = fs::read_to_string(f.run.join(FILTER_CURVES)).unwrap();
    assert!(csv.starts_with("series,x,y\n"));

    let out = uncx(&["filter", "--out", s(&f.run), "--auto-flag"]);
    assert!(out.status.success());
    assert_eq!(json(&f.run.join(FILTER_FILE))["flag_source"], "auto");

    let out = uncx(&["reject", "--out", s(&f.run), "--seeds", "0,1,2,3,4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reject = json(&f.run.join("reject.json"));
    assert_eq!(reject["seeds"].as_array().unwrap().len(), 5);
    assert_eq!(reject["curves"]["methods"].as_array().unwrap().len(), 5);
    assert!(fs::read_to_string(f.run.join("reject_curves.csv")).unwrap().contains("Weighted:accuracy"));

    let out = uncx(&["intervene", "--out", s(&f.run), "--concepts", &unc]);
    assert!(out.status.success());
    let rep = json(&f.run.join("intervene.json"));
    assert_eq!(rep["concepts"][0].as_u64().unwrap().to_string(), unc);
    let written: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(written["written"][0].as_str().unwrap().ends_with("intervene.json"));
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = uncx(&["pipeline", "--dataset", s(&missing), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_code(&out), "MissingFile");

    let bad = write(tmp.path(), "bad.json", r#"{"d_cer": 4, "colour": "red"}"#);
    let out = uncx(&["pipeline", "--config", s(&bad), "--dataset", s(tmp.path()), "--out", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_code(&out), "InvalidConfig");

    let out = uncx(&["filter", "--out", s(tmp.path()), "--flags", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_code(&out), "MissingRunArtifacts");
}

#[test]
fn flag_outside_uncertain_bank_is_an_input_error() {
    let f = fixture();
    let out = uncx(&["filter", "--out", s(&f.run), "--flags", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_code(&out), "FlagNotInUncertainBank");

    let out = uncx(&["intervene", "--out", s(&f.run), "--concepts", "999"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_code(&out), "ConceptOutOfRange");
}

#[test]
fn computation_errors_exit_with_one() {
    let f = fixture();
    // every item gets the same prediction, so the scores cannot be split
    let mut ds = uncx::store::load_dataset(&f.data).unwrap();
    let (n, mc, k) = ds.predictions.as_array().dim();
    ds.predictions = uncx::uncertainty::PredictionSamples::new(ndarray::Array3::from_elem((n, mc, k), 1.0 / k as f64)).unwrap();
    let flat = f.tmp.path().join("flat");
    uncx::store::write_dataset(&flat, &ds).unwrap();

    let out = uncx(&["pipeline", "--dataset", s(&flat), "--out", s(&f.tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_code(&out), "DegenerateData");
}

#[test]
fn flags_override_the_config_file() {
    let f = fixture();
    let out = f.tmp.path().join("override");
    let mut args = pipeline_args(&f.config, &f.data, &out);
    args.d_unc = Some(3);
    cmd_pipeline(&args).unwrap();
    let report = json(&out.join("report.json"));
    assert_eq!(report["config"]["d_unc"], 3);
    assert_eq!(report["config"]["d_cer"], 4);
    assert_eq!(report["config"]["n_qmc"], 64);
}

#[test]
fn reports_are_byte_stable() {
    let f = fixture();
    let first = fs::read(f.run.join("report.json")).unwrap();
    cmd_pipeline(&pipeline_args(&f.config, &f.data, &f.run)).unwrap();
    assert_eq!(first, fs::read(f.run.join("report.json")).unwrap());

    let args = FilterArgs {
        out: f.run.clone(),
        methods: vec!["all".into()],
        flags: Some(vec![first_unc(&f.run)]),
        auto_flag: false,
    };
    cmd_filter(&args).unwrap();
    let a = fs::read(f.run.join(FILTER_FILE)).unwrap();
    cmd_filter(&args).unwrap();
    assert_eq!(a, fs::read(f.run.join(FILTER_FILE)).unwrap());
}

#[test]
fn synth_presets_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write(tmp.path(), "spec.json", r#"{"n_items": 50}"#);
    let out = tmp.path().join("ds");
    let run = uncx(&["synth", "--preset", "rejection", "--spec", s(&spec), "--seed", "3", "--out", s(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["n_items"], 50);
    let ood = manifest["items"].as_array().unwrap().iter().filter(|i| i["is_ood"] == true).count();
    assert_eq!(ood, 20);

    let bad = write(tmp.path(), "bad.json", r#"{"ood_fraction": 2.0}"#);
    let run = uncx(&["synth", "--spec", s(&bad), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(run.status.code(), Some(2));
    assert_eq!(stderr_code(&run), "InvalidSpec");
}

#[test]
fn reject_without_ood_and_one_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write(tmp.path(), "spec.json", r#"{"n_items": 160, "ood_fraction": 0.0}"#);
    let config = write(tmp.path(), "config.json", common::SMALL_CONFIG);
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    assert!(uncx(&["synth", "--spec", s(&spec), "--out", s(&data)]).status.success());
    assert!(uncx(&["pipeline", "--config", s(&config), "--dataset", s(&data), "--out", s(&run)]).status.success());

    let out = uncx(&["reject", "--out", s(&run), "--seeds", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&run.join("reject.json"));
    assert!(report["wilcoxon_weighted_vs_total"].is_null());
    assert!(report["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("single seed")));
    for m in report["curves"]["methods"].as_array().unwrap() {
        assert!(m["ood_curve"]["y"].as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0)));
    }
}

#[test]
fn intervene_needs_concepts() {
    let f = fixture();
    let out = uncx(&["intervene", "--out", s(&f.run)]);
    assert_eq!(out.status.code(), Some(2));
}
