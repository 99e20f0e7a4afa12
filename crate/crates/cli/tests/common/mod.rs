#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use uncx_cli::commands::{cmd_pipeline, cmd_synth, ConfigArgs, Preset, SynthArgs};

pub const SMALL_SPEC: &str = r#"{"n_items": 160}"#;
pub const SMALL_CONFIG: &str = r#"{"d_cer": 4, "d_unc": 4, "n_qmc": 64, "mask_samples": 4}"#;

pub struct Fixture {
    pub tmp: tempfile::TempDir,
    pub data: PathBuf,
    pub run: PathBuf,
    pub config: PathBuf,
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// A small synthetic dataset and a pipeline run over it.
pub fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let spec = write(tmp.path(), "spec.json", SMALL_SPEC);
    let config = write(tmp.path(), "config.json", SMALL_CONFIG);
    cmd_synth(&SynthArgs {
        spec: Some(spec),
        preset: Preset::Default,
        seed: Some(2),
        out: data.clone(),
    })
    .unwrap();
    cmd_pipeline(&pipeline_args(&config, &data, &run)).unwrap();
    Fixture { tmp, data, run, config }
}

pub fn pipeline_args(config: &Path, data: &Path, out: &Path) -> ConfigArgs {
    ConfigArgs {
        config: Some(config.to_path_buf()),
        dataset: Some(data.to_path_buf()),
        out: Some(out.to_path_buf()),
        ..ConfigArgs::default()
    }
}

/// First combined id of the uncertain bank.
pub fn first_unc(run: &Path) -> usize {
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    report["concepts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["provenance"] == "UNC")
        .unwrap()["id"]
        .as_u64()
        .unwrap() as usize
}
