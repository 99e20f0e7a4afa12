use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{resolve_concept, NmfSummary, PipelineRun, RunConfig};
use crate::concepts::{ConceptBank, Provenance};
use crate::error::{Error, Result};
use crate::grouping::{assign_groups, group_sizes, Gmm2, Group};
use crate::importance::GlobalImportance;
use crate::store::{load_dataset, read_tensor, write_tensor, Dataset, TensorFile};
use crate::uncertainty::score_all;

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

const SCORES: &str = "scores.npy";
const F_VALUES: &str = "f_values.npy";
const GROUPS: &str = "groups.npy";
const BANK_CER: &str = "bank_cer.npy";
const BANK_UNC: &str = "bank_unc.npy";
const W_CER: &str = "coefficients_cer.npy";
const W_UNC: &str = "coefficients_unc.npy";
const W_COMBINED: &str = "coefficients_combined.npy";
const POOLED: &str = "pooled_combined.npy";
const LOCAL: &str = "local_importance.npy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_items: usize,
    pub n_segments: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub n_mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCounts {
    #[serde(rename = "CER")]
    pub certain: usize,
    #[serde(rename = "UNC")]
    pub uncertain: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSummary {
    pub provenance: Provenance,
    /// First combined concept id of this bank.
    pub offset: usize,
    pub d: usize,
    pub seed: u64,
    pub dead: Vec<usize>,
    pub nmf: NmfSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSummary {
    pub id: usize,
    pub provenance: Provenance,
    pub index: usize,
    pub global_importance: f64,
    /// Position within its bank by descending global importance, from 0.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub config: RunConfig,
    pub seed: u64,
    pub dataset: DatasetSummary,
    pub gmm: Gmm2,
    pub groups: GroupCounts,
    pub banks: Vec<BankSummary>,
    pub global_importance: GlobalImportance,
    pub concepts: Vec<ConceptSummary>,
    pub warnings: Vec<String>,
    pub artifacts: BTreeMap<String, String>,
}

fn ranks(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut rank = vec![0; values.len()];
    for (r, i) in idx.into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

impl PipelineRun {
    pub fn report(&self, dataset: &Dataset) -> RunReport {
        let (certain, uncertain) = group_sizes(&self.assignments);
        let d_cer = self.d_cer();
        let bank = |b: &ConceptBank, offset: usize, nmf: NmfSummary| BankSummary {
            provenance: b.provenance,
            offset,
            d: b.len(),
            seed: b.seed,
            dead: b.dead.clone(),
            nmf,
        };
        let mut concepts = Vec::new();
        for (offset, values) in [(0, &self.global.certain.values), (d_cer, &self.global.uncertain.values)] {
            for (index, (&v, rank)) in values.iter().zip(ranks(values)).enumerate() {
                let id = resolve_concept(offset + index, d_cer, self.d_unc()).expect("in range");
                concepts.push(ConceptSummary {
                    id: id.id,
                    provenance: id.bank,
                    index,
                    global_importance: v,
                    rank,
                });
            }
        }
        let artifacts = [
            ("scores", SCORES),
            ("f_values", F_VALUES),
            ("groups", GROUPS),
            ("bank_cer", BANK_CER),
            ("bank_unc", BANK_UNC),
            ("coefficients_cer", W_CER),
            ("coefficients_unc", W_UNC),
            ("coefficients_combined", W_COMBINED),
            ("pooled_combined", POOLED),
            ("local_importance", LOCAL),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        RunReport {
            report_version: REPORT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            dataset: DatasetSummary {
                n_items: dataset.n_items(),
                n_segments: dataset.segments.rows(),
                channels: dataset.segments.channels(),
                n_classes: dataset.manifest.n_classes,
                n_mc_samples: dataset.manifest.n_mc_samples,
            },
            gmm: self.gmm.clone(),
            groups: GroupCounts { certain, uncertain },
            banks: vec![
                bank(&self.bank_cer, 0, self.nmf_cer),
                bank(&self.bank_unc, d_cer, self.nmf_unc),
            ],
            global_importance: self.global.clone(),
            concepts,
            warnings: self.warnings.clone(),
            artifacts,
        }
    }

    /// Writes `report.json` and every tensor artifact into `dir`.
    pub fn save(&self, dataset: &Dataset, dir: impl AsRef<Path>) -> Result<RunReport> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let scores = Array2::from_shape_fn((self.scores.len(), 3), |(i, j)| {
            let s = &self.scores[i];
            [s.total, s.aleatoric, s.epistemic][j]
        });
        write_tensor(&TensorFile::from_matrix(&scores), dir.join(SCORES))?;
        write_tensor(&TensorFile::from_vector(&self.f_values()), dir.join(F_VALUES))?;
        let groups: Vec<i64> = self.groups().iter().map(|g| i64::from(*g == Group::Uncertain)).collect();
        write_tensor(&TensorFile::from_indices(&groups), dir.join(GROUPS))?;
        write_tensor(&TensorFile::from_matrix(&self.bank_cer.components), dir.join(BANK_CER))?;
        write_tensor(&TensorFile::from_matrix(&self.bank_unc.components), dir.join(BANK_UNC))?;
        write_tensor(&TensorFile::from_matrix(&self.w_cer), dir.join(W_CER))?;
        write_tensor(&TensorFile::from_matrix(&self.w_unc), dir.join(W_UNC))?;
        write_tensor(&TensorFile::from_matrix(&self.w_combined), dir.join(W_COMBINED))?;
        write_tensor(&TensorFile::from_matrix(&self.pooled_combined), dir.join(POOLED))?;
        write_tensor(&TensorFile::from_matrix(&self.local), dir.join(LOCAL))?;
        let report = self.report(dataset);
        write_json(dir.join(REPORT_FILE), &report)?;
        Ok(report)
    }
}

pub(crate) fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// A saved run together with the dataset it was computed on.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub report: RunReport,
    pub run: PipelineRun,
    pub dataset: Dataset,
}

/// Reads a run directory written by [`PipelineRun::save`]. Scores and group
/// assignments are recomputed from the dataset and the stored mixture;
/// banks, coefficients and importances come from the tensor files.
pub fn load_run(dir: impl AsRef<Path>) -> Result<LoadedRun> {
    let dir = dir.as_ref();
    let report_path = dir.join(REPORT_FILE);
    if !report_path.is_file() {
        return Err(Error::MissingRunArtifacts(report_path));
    }
    let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| Error::json(&report_path, e))?;
    if report.report_version != REPORT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported report_version {}",
            report.report_version
        )));
    }
    let dataset = load_dataset(&report.config.dataset)?;
    let matrix = |name: &str| -> Result<Array2<f64>> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(Error::MissingRunArtifacts(path));
        }
        read_tensor(&path)?.to_matrix()
    };
    let [cer_meta, unc_meta] = match report.banks.as_slice() {
        [a, b] => [a.clone(), b.clone()],
        _ => return Err(Error::InvalidConfig("report must describe exactly two banks".into())),
    };
    let bank = |name: &str, meta: &BankSummary| -> Result<ConceptBank> {
        let mut b = ConceptBank::new(matrix(name)?, meta.provenance, meta.seed)?;
        b.dead = meta.dead.clone();
        Ok(b)
    };
    let bank_cer = bank(BANK_CER, &cer_meta)?;
    let bank_unc = bank(BANK_UNC, &unc_meta)?;

    let scores = score_all(&dataset.predictions);
    let u: Vec<f64> = scores.iter().map(|s| s.get(report.config.measure)).collect();
    let assignments = assign_groups(&report.gmm, &u);
    let n = dataset.n_items();
    let (d_cer, d_unc) = (bank_cer.len(), bank_unc.len());
    let expect = |m: Array2<f64>, rows: usize, cols: usize, name: &str| -> Result<Array2<f64>> {
        if m.dim() != (rows, cols) {
            return Err(Error::InconsistentShapes(format!(
                "{name} has shape {:?}, expected ({rows}, {cols})",
                m.dim()
            )));
        }
        Ok(m)
    };
    let segs = dataset.segments.rows();
    let run = PipelineRun {
        config: report.config.clone(),
        seed: report.seed,
        scores,
        gmm: report.gmm.clone(),
        assignments,
        nmf_cer: cer_meta.nmf,
        nmf_unc: unc_meta.nmf,
        w_cer: expect(matrix(W_CER)?, segs, d_cer, W_CER)?,
        w_unc: expect(matrix(W_UNC)?, segs, d_unc, W_UNC)?,
        w_combined: expect(matrix(W_COMBINED)?, segs, d_cer + d_unc, W_COMBINED)?,
        pooled_combined: expect(matrix(POOLED)?, n, d_cer + d_unc, POOLED)?,
        local: expect(matrix(LOCAL)?, n, d_cer + d_unc, LOCAL)?,
        global: report.global_importance.clone(),
        warnings: report.warnings.clone(),
        bank_cer,
        bank_unc,
    };
    debug_assert_eq!(run.local.len_of(Axis(0)), n);
    Ok(LoadedRun { report, run, dataset })
}
