//! End-to-end runs: uncertainty scores, grouping, one concept bank per
//! group, local and global importances, and the artifacts a run leaves on
//! disk.

mod artifacts;
mod downstream;

use std::path::PathBuf;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::{combine_banks, fit_nmf, pool_all, transform_nnls, ConceptBank, NmfConfig, Pooling, Provenance};
use crate::error::{Error, Result};
use crate::grouping::{assign_groups, fit_gmm_em, group_sizes, Gmm2, Group, GroupAssignment, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::importance::{global_importance, GlobalImportance, MaskDesign, Sequence, UncertaintyResponse, MIN_DESIGN_ROWS};
use crate::store::Dataset;
use crate::uncertainty::{score_all, DropoutMaskSet, Measure, UncertaintyScores};

pub use artifacts::{load_run, LoadedRun, RunReport, BankSummary, ConceptSummary, REPORT_FILE, REPORT_VERSION};
pub use downstream::{
    auto_flags, filter_report, intervention_report, rejection_metrics, rejection_over_seeds, FilterMethodReport, FilterReport,
    FlagSource, InterventionReport, PredictionChange, RejectMethodReport, RejectionMetrics, RejectionReport,
    SeedRejection,
};

/// Everything that decides a run. Persisted verbatim in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: Option<PathBuf>,
    pub measure: Measure,
    pub d_cer: usize,
    pub d_unc: usize,
    /// Rows of each Sobol mask design.
    pub n_qmc: usize,
    /// The first seed drives `pipeline`; `reject` repeats the run per seed.
    pub seeds: Vec<u64>,
    pub pooling: Pooling,
    /// Dropout samples of the head inside the importance response.
    pub mask_samples: usize,
    pub sequence: Sequence,
    pub nmf_max_iter: usize,
    pub nmf_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            out: None,
            measure: Measure::Total,
            d_cer: 10,
            d_unc: 10,
            n_qmc: 128,
            seeds: vec![0],
            pooling: Pooling::Mean,
            mask_samples: 16,
            sequence: Sequence::Sobol,
            nmf_max_iter: 400,
            nmf_tol: 1e-6,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_cer == 0 || self.d_unc == 0 {
            return bad("d_cer and d_unc must be positive".into());
        }
        if self.sequence == Sequence::Sobol && self.d_cer.max(self.d_unc) > 64 {
            return bad("Sobol designs support at most 64 concepts per bank".into());
        }
        if self.n_qmc < MIN_DESIGN_ROWS {
            return bad(format!("n_qmc must be at least {MIN_DESIGN_ROWS}, got {}", self.n_qmc));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.mask_samples == 0 {
            return bad("mask_samples must be positive".into());
        }
        if self.nmf_max_iter == 0 || !(self.nmf_tol > 0.0) {
            return bad("nmf_max_iter and nmf_tol must be positive".into());
        }
        Ok(())
    }

    pub fn primary_seed(&self) -> u64 {
        self.seeds[0]
    }
}

/// Combined concept ids put the certain bank first: `0..d_cer` are CER
/// concepts, `d_cer..d_cer + d_unc` are UNC concepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptId {
    pub id: usize,
    pub bank: Provenance,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfSummary {
    pub iterations: usize,
    pub relative_error: f64,
    pub rows: usize,
}

/// In-memory result of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: RunConfig,
    pub seed: u64,
    pub scores: Vec<UncertaintyScores>,
    pub gmm: Gmm2,
    pub assignments: Vec<GroupAssignment>,
    pub bank_cer: ConceptBank,
    pub bank_unc: ConceptBank,
    pub nmf_cer: NmfSummary,
    pub nmf_unc: NmfSummary,
    /// Segment coefficients against each bank and against `[V_cer; V_unc]`.
    pub w_cer: Array2<f64>,
    pub w_unc: Array2<f64>,
    pub w_combined: Array2<f64>,
    /// Item-pooled `w_combined`.
    pub pooled_combined: Array2<f64>,
    /// `items x (d_cer + d_unc)`; each row is filled only in its own
    /// group's block.
    pub local: Array2<f64>,
    pub global: GlobalImportance,
    pub warnings: Vec<String>,
}

impl PipelineRun {
    pub fn d_cer(&self) -> usize {
        self.bank_cer.len()
    }

    pub fn d_unc(&self) -> usize {
        self.bank_unc.len()
    }

    pub fn groups(&self) -> Vec<Group> {
        self.assignments.iter().map(|a| a.group).collect()
    }

    pub fn f_values(&self) -> Vec<f64> {
        self.assignments.iter().map(|a| a.f_value).collect()
    }

    pub fn concept(&self, id: usize) -> Result<ConceptId> {
        resolve_concept(id, self.d_cer(), self.d_unc())
    }

    /// Local importances of UNC items against the UNC bank.
    pub fn local_unc(&self) -> ArrayView2<'_, f64> {
        self.local.slice(s![.., self.d_cer()..])
    }

    pub fn combined_bank(&self) -> Result<ConceptBank> {
        combine_banks(&self.bank_cer, &self.bank_unc)
    }
}

pub fn resolve_concept(id: usize, d_cer: usize, d_unc: usize) -> Result<ConceptId> {
    if id >= d_cer + d_unc {
        return Err(Error::ConceptOutOfRange {
            concept: id,
            available: d_cer + d_unc,
        });
    }
    Ok(if id < d_cer {
        ConceptId { id, bank: Provenance::Certain, index: id }
    } else {
        ConceptId { id, bank: Provenance::Uncertain, index: id - d_cer }
    })
}

fn segment_rows(dataset: &Dataset, assignments: &[GroupAssignment], group: Group) -> Vec<usize> {
    dataset
        .manifest
        .items
        .iter()
        .zip(assignments)
        .filter(|(_, a)| a.group == group)
        .flat_map(|(item, _)| item.rows())
        .collect()
}

fn fit_group_bank(
    dataset: &Dataset,
    assignments: &[GroupAssignment],
    group: Group,
    d: usize,
    config: &NmfConfig,
    warnings: &mut Vec<String>,
) -> Result<(ConceptBank, NmfSummary)> {
    let rows = segment_rows(dataset, assignments, group);
    let name = match group {
        Group::Certain => "CER",
        Group::Uncertain => "UNC",
    };
    if rows.is_empty() {
        return Err(Error::NotEnoughData(format!("group {name} has no members to learn concepts from")));
    }
    let data = dataset.segments.matrix().select(ndarray::Axis(0), &rows);
    let d_eff = d.min(rows.len()).min(data.ncols());
    if d_eff < d {
        warnings.push(format!("{name} bank reduced from {d} to {d_eff} concepts: only {} segments", rows.len()));
    }
    let provenance = match group {
        Group::Certain => Provenance::Certain,
        Group::Uncertain => Provenance::Uncertain,
    };
    let fit = fit_nmf(data.view(), d_eff, provenance, config)?;
    if !fit.bank.dead.is_empty() {
        warnings.push(format!("{name} bank has dead concepts {:?}", fit.bank.dead));
    }
    let summary = NmfSummary {
        iterations: fit.iterations,
        relative_error: fit.relative_error(data.view()),
        rows: rows.len(),
    };
    Ok((fit.bank, summary))
}

/// Runs every step on one seed.
pub fn run_pipeline(dataset: &Dataset, config: &RunConfig, seed: u64) -> Result<PipelineRun> {
    config.validate()?;
    let mut warnings = Vec::new();
    let scores = score_all(&dataset.predictions);
    let u: Vec<f64> = scores.iter().map(|s| s.get(config.measure)).collect();
    let gmm = fit_gmm_em(&u, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let assignments = assign_groups(&gmm, &u);
    let (n_cer, n_unc) = group_sizes(&assignments);

    let nmf = |offset: u64| NmfConfig {
        seed: seed.wrapping_add(offset),
        max_iter: config.nmf_max_iter,
        tol: config.nmf_tol,
    };
    let (bank_cer, nmf_cer) =
        fit_group_bank(dataset, &assignments, Group::Certain, config.d_cer, &nmf(0), &mut warnings)?;
    let (bank_unc, nmf_unc) =
        fit_group_bank(dataset, &assignments, Group::Uncertain, config.d_unc, &nmf(1), &mut warnings)?;
    let (d_cer, d_unc) = (bank_cer.len(), bank_unc.len());

    let segments = dataset.segments.matrix();
    let w_cer = transform_nnls(segments, &bank_cer)?;
    let w_unc = transform_nnls(segments, &bank_unc)?;
    let combined = combine_banks(&bank_cer, &bank_unc)?;
    let w_combined = transform_nnls(segments, &combined)?;
    let items = &dataset.manifest.items;
    let pooled_combined = pool_all(w_combined.view(), items, config.pooling)?;

    let masks = DropoutMaskSet::generate(
        seed.wrapping_add(2),
        config.mask_samples,
        dataset.head.channels(),
        dataset.head.dropout_rate,
    )?;
    let response_cer =
        UncertaintyResponse::new(&bank_cer, &dataset.head, &masks, &gmm, config.measure, config.pooling)?;
    let response_unc =
        UncertaintyResponse::new(&bank_unc, &dataset.head, &masks, &gmm, config.measure, config.pooling)?;
    let design_cer = MaskDesign::new(config.n_qmc, d_cer, seed.wrapping_add(3), config.sequence)?;
    let design_unc = MaskDesign::new(config.n_qmc, d_unc, seed.wrapping_add(4), config.sequence)?;

    let locals = items
        .par_iter()
        .zip(&assignments)
        .map(|(item, a)| match a.group {
            Group::Certain => response_cer.local_importance(item, w_cer.view(), &design_cer),
            Group::Uncertain => response_unc.local_importance(item, w_unc.view(), &design_unc),
        })
        .collect::<Result<Vec<_>>>()?;
    let groups: Vec<Group> = assignments.iter().map(|a| a.group).collect();
    let global = global_importance(&locals, &groups, d_cer, d_unc)?;
    for (name, g) in [("CER", &global.certain), ("UNC", &global.uncertain)] {
        if g.empty {
            warnings.push(format!("group {name} is empty; its global importance is zero"));
        }
    }
    let mut local = Array2::zeros((items.len(), d_cer + d_unc));
    for (i, (v, g)) in locals.iter().zip(&groups).enumerate() {
        let offset = if *g == Group::Certain { 0 } else { d_cer };
        for (j, x) in v.values.iter().enumerate() {
            local[[i, offset + j]] = *x;
        }
    }
    debug_assert_eq!(n_cer + n_unc, items.len());

    Ok(PipelineRun {
        config: config.clone(),
        seed,
        scores,
        gmm,
        assignments,
        bank_cer,
        bank_unc,
        nmf_cer,
        nmf_unc,
        w_cer,
        w_unc,
        w_combined,
        pooled_combined,
        local,
        global,
        warnings,
    })
}
