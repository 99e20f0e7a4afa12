use std::collections::BTreeMap;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_pipeline, PipelineRun, RunConfig, REPORT_VERSION};
use crate::concepts::{pool_all, Provenance};
use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::store::Dataset;
use crate::strategies::{
    accuracy_rejection_curve, argmax, auto_flag_concepts, baseline_uncertainty_ranking, concept_ablation_repredict,
    curve_auc, equalized_odds_gap, kept_useful_curve, noise_filter_ranking, ood_rejection_curve, pearson_correlation,
    rejection_ranking, uncertainty_order, wilcoxon_paired, AutoFlag, Curve, EqualizedOdds, FilterMethod,
    RejectMethod, WilcoxonResult,
};
use crate::uncertainty::posterior_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagSource {
    Explicit,
    Journal,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMethodReport {
    pub method: FilterMethod,
    /// Item ids, most noise-like first.
    pub ranking: Vec<String>,
    pub curve: Option<Curve>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub report_version: u32,
    /// Combined concept ids.
    pub flags: Vec<usize>,
    pub flag_source: FlagSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auto_flag: Option<AutoFlag>,
    /// Items of the uncertain group, the set being filtered.
    pub candidates: usize,
    pub methods: Vec<FilterMethodReport>,
    pub warnings: Vec<String>,
}

fn item_ids(dataset: &Dataset) -> Vec<&str> {
    dataset.item_ids()
}

/// Uncertain-bank concepts picked by the logistic stand-in reviewer,
/// trained on the segments of uncertain items labeled by `is_corrupted`.
/// Returns combined concept ids.
pub fn auto_flags(run: &PipelineRun, dataset: &Dataset) -> Result<(Vec<usize>, AutoFlag)> {
    let mut rows = Vec::new();
    let mut noisy = Vec::new();
    for (item, a) in dataset.manifest.items.iter().zip(&run.assignments) {
        if a.group != Group::Uncertain {
            continue;
        }
        let flag = item
            .is_corrupted
            .ok_or_else(|| Error::MissingTruthFlags(format!("item '{}' has no is_corrupted flag", item.id)))?;
        for r in item.rows() {
            rows.push(r);
            noisy.push(flag);
        }
    }
    let features = run.w_unc.select(Axis(0), &rows);
    let fit = auto_flag_concepts(features.view(), &noisy)?;
    let ids = fit.flagged.iter().map(|&j| j + run.d_cer()).collect();
    Ok((ids, fit))
}

/// Ranks the uncertain group for each method; curves appear when every
/// candidate has an `is_corrupted` flag.
pub fn filter_report(
    run: &PipelineRun,
    dataset: &Dataset,
    flags: &[usize],
    flag_source: FlagSource,
    auto_flag: Option<AutoFlag>,
    methods: &[FilterMethod],
) -> Result<FilterReport> {
    if flags.is_empty() {
        return Err(Error::EmptyFlagSet);
    }
    let mut local_flags = Vec::with_capacity(flags.len());
    for &id in flags {
        let c = run.concept(id)?;
        if c.bank != Provenance::Uncertain {
            return Err(Error::FlagNotInUncertainBank(id));
        }
        local_flags.push(c.index);
    }
    local_flags.sort_unstable();
    local_flags.dedup();

    let ids = item_ids(dataset);
    let candidates: Vec<usize> = run
        .assignments
        .iter()
        .enumerate()
        .filter(|(_, a)| a.group == Group::Uncertain)
        .map(|(i, _)| i)
        .collect();
    let corrupted: Vec<Option<bool>> = dataset.manifest.items.iter().map(|i| i.is_corrupted).collect();
    let pooled_unc = pool_all(run.w_unc.view(), &dataset.manifest.items, run.config.pooling)?;
    let mut warnings = Vec::new();
    let mut reports = Vec::with_capacity(methods.len());
    for &method in methods {
        let ranking = match method.baseline_measure() {
            Some(measure) => baseline_uncertainty_ranking(&candidates, &run.scores, measure, &ids)?,
            None => {
                let features = match method {
                    FilterMethod::OursNmf => pooled_unc.view(),
                    _ => run.local_unc(),
                };
                noise_filter_ranking(&candidates, features, &local_flags, method, &ids)?
            }
        };
        let curve = if candidates.len() < 2 {
            None
        } else {
            match kept_useful_curve(method.name(), &ranking.order, &corrupted) {
                Ok(c) => Some(c),
                Err(Error::MissingTruthFlags(msg)) => {
                    if warnings.is_empty() {
                        warnings.push(format!("no kept-useful curves: {msg}"));
                    }
                    None
                }
                Err(e) => return Err(e),
            }
        };
        reports.push(FilterMethodReport {
            method,
            ranking: ranking.order.iter().map(|&i| ids[i].to_string()).collect(),
            auc: curve.as_ref().map(curve_auc),
            curve,
        });
    }
    if candidates.len() < 2 {
        warnings.push(format!("uncertain group has {} item(s); curves skipped", candidates.len()));
    }
    let mut flags = flags.to_vec();
    flags.sort_unstable();
    flags.dedup();
    Ok(FilterReport {
        report_version: REPORT_VERSION,
        flags,
        flag_source,
        auto_flag,
        candidates: candidates.len(),
        methods: reports,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectMethodReport {
    pub method: RejectMethod,
    /// Item ids, first rejected first.
    pub ranking: Vec<String>,
    pub accuracy_curve: Curve,
    pub accuracy_auc: f64,
    pub ood_curve: Option<Curve>,
    pub ood_auc: Option<f64>,
    /// OOD share of the retained items after rejecting 40%.
    pub ood_remaining_at_40: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionMetrics {
    pub seed: u64,
    pub methods: Vec<RejectMethodReport>,
}

impl RejectionMetrics {
    pub fn get(&self, method: RejectMethod) -> Option<&RejectMethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Rejection curves of all five strategies for one run.
pub fn rejection_metrics(run: &PipelineRun, dataset: &Dataset) -> Result<RejectionMetrics> {
    let ids = item_ids(dataset);
    let items = &dataset.manifest.items;
    let labels: Vec<Option<usize>> = items.iter().map(|i| i.true_label).collect();
    let is_ood: Vec<Option<bool>> = items.iter().map(|i| i.is_ood).collect();
    let has_ood_flags = is_ood.iter().all(Option::is_some);
    let predicted = (0..dataset.n_items())
        .map(|i| Ok(argmax(posterior_mean(dataset.predictions.item(i))?.iter().copied())))
        .collect::<Result<Vec<usize>>>()?;
    let all: Vec<usize> = (0..dataset.n_items()).collect();
    let f = run.f_values();

    let mut methods = Vec::with_capacity(RejectMethod::ALL.len());
    for method in RejectMethod::ALL {
        let order = match method.baseline_measure() {
            Some(m) => uncertainty_order(&all, &run.scores, m, &ids)?,
            None => {
                rejection_ranking(
                    run.pooled_combined.view(),
                    &run.global.certain.values,
                    &run.global.uncertain.values,
                    &f,
                    method,
                    &ids,
                )?
                .order
            }
        };
        let accuracy_curve = accuracy_rejection_curve(method.name(), &order, &predicted, &labels, &is_ood)?;
        let ood_curve = if has_ood_flags {
            Some(ood_rejection_curve(method.name(), &order, &is_ood)?)
        } else {
            None
        };
        methods.push(RejectMethodReport {
            method,
            ranking: order.iter().map(|&i| ids[i].to_string()).collect(),
            accuracy_auc: curve_auc(&accuracy_curve),
            accuracy_curve,
            ood_auc: ood_curve.as_ref().map(curve_auc),
            ood_remaining_at_40: ood_curve.as_ref().map(|c| c.y[40]),
            ood_curve,
        });
    }
    Ok(RejectionMetrics { seed: run.seed, methods })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRejection {
    pub seed: u64,
    pub accuracy_auc: BTreeMap<String, f64>,
    pub ood_remaining_at_40: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub report_version: u32,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedRejection>,
    pub mean_accuracy_auc: BTreeMap<String, f64>,
    /// One-sided test of Weighted AUC above Total AUC across seeds.
    pub wilcoxon_weighted_vs_total: Option<WilcoxonResult>,
    /// Full curves of the first seed.
    pub curves: RejectionMetrics,
    pub warnings: Vec<String>,
}

/// Repeats the pipeline for every configured seed and compares the
/// strategies; seeds only change the stochastic parts of the pipeline.
pub fn rejection_over_seeds(dataset: &Dataset, config: &RunConfig) -> Result<RejectionReport> {
    config.validate()?;
    let metrics = config
        .seeds
        .par_iter()
        .map(|&seed| rejection_metrics(&run_pipeline(dataset, config, seed)?, dataset))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let per_seed: Vec<SeedRejection> = metrics
        .iter()
        .map(|m| SeedRejection {
            seed: m.seed,
            accuracy_auc: m.methods.iter().map(|r| (r.method.name().to_string(), r.accuracy_auc)).collect(),
            ood_remaining_at_40: m
                .methods
                .iter()
                .filter_map(|r| Some((r.method.name().to_string(), r.ood_remaining_at_40?)))
                .collect(),
        })
        .collect();
    let mut mean_accuracy_auc = BTreeMap::new();
    for method in RejectMethod::ALL {
        let name = method.name().to_string();
        let mean = per_seed.iter().map(|s| s.accuracy_auc[&name]).sum::<f64>() / per_seed.len() as f64;
        mean_accuracy_auc.insert(name, mean);
    }
    let series = |m: RejectMethod| -> Vec<f64> { per_seed.iter().map(|s| s.accuracy_auc[m.name()]).collect() };
    let wilcoxon = if per_seed.len() < 2 {
        warnings.push("single seed: Wilcoxon p-value omitted".to_string());
        None
    } else {
        match wilcoxon_paired(&series(RejectMethod::Weighted), &series(RejectMethod::Total)) {
            Ok(w) => Some(w),
            Err(Error::TooFewPairs(n)) => {
                warnings.push(format!("only {n} seeds with nonzero AUC difference: Wilcoxon p-value omitted"));
                None
            }
            Err(e) => return Err(e),
        }
    };
    Ok(RejectionReport {
        report_version: REPORT_VERSION,
        seeds: config.seeds.clone(),
        per_seed,
        mean_accuracy_auc,
        wilcoxon_weighted_vs_total: wilcoxon,
        curves: metrics.into_iter().next().expect("at least one seed"),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionChange {
    pub item_id: String,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub report_version: u32,
    /// Ablated combined concept ids.
    pub concepts: Vec<usize>,
    /// Pearson r of each combined concept's pooled coefficient with
    /// `group_attr`; `None` for concepts that never vary.
    pub correlations: Vec<Option<f64>>,
    /// Concept with the largest `|r|`.
    pub most_correlated: Option<usize>,
    pub before: EqualizedOdds,
    pub after: EqualizedOdds,
    /// `after.gap - before.gap`.
    pub gap_delta: f64,
    pub changed: Vec<PredictionChange>,
}

/// Ablates combined-bank concepts and measures the fairness effect. Both
/// prediction sets come from the reconstruction `W V` through the head
/// without dropout, so only the ablation differs.
pub fn intervention_report(run: &PipelineRun, dataset: &Dataset, concepts: &[usize]) -> Result<InterventionReport> {
    if concepts.is_empty() {
        return Err(Error::InvalidArgument("no concepts to ablate".into()));
    }
    for &c in concepts {
        run.concept(c)?;
    }
    let items = &dataset.manifest.items;
    let attr: Vec<Option<u8>> = items.iter().map(|i| i.group_attr).collect();
    let with_attr: Vec<usize> = (0..items.len()).filter(|&i| attr[i].is_some()).collect();
    if with_attr.is_empty() {
        return Err(Error::MissingGroupAttr("no item carries group_attr".into()));
    }
    let g: Vec<f64> = with_attr.iter().map(|&i| f64::from(attr[i].unwrap_or(0))).collect();
    let correlations = (0..run.pooled_combined.ncols())
        .map(|c| {
            let x: Vec<f64> = with_attr.iter().map(|&i| run.pooled_combined[[i, c]]).collect();
            match pearson_correlation(&x, &g) {
                Ok(r) => Ok(Some(r)),
                Err(Error::ConstantInput) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let most_correlated = correlations
        .iter()
        .enumerate()
        .filter_map(|(c, r)| Some((c, r.as_ref()?.abs())))
        .fold(None, |best: Option<(usize, f64)>, (c, r)| match best {
            Some((_, b)) if b >= r => best,
            _ => Some((c, r)),
        })
        .map(|(c, _)| c);

    let bank = run.combined_bank()?;
    let pooling = run.config.pooling;
    let before = concept_ablation_repredict(run.w_combined.view(), items, &bank, &[], &dataset.head, pooling)?;
    let after = concept_ablation_repredict(run.w_combined.view(), items, &bank, concepts, &dataset.head, pooling)?;
    let labels: Vec<Option<usize>> = items.iter().map(|i| i.true_label).collect();
    let k = dataset.manifest.n_classes;
    let gap_before = equalized_odds_gap(&before.predicted, &labels, &attr, k)?;
    let gap_after = equalized_odds_gap(&after.predicted, &labels, &attr, k)?;
    let changed = items
        .iter()
        .zip(before.predicted.iter().zip(&after.predicted))
        .filter(|(_, (b, a))| b != a)
        .map(|(item, (&b, &a))| PredictionChange {
            item_id: item.id.clone(),
            before: b,
            after: a,
        })
        .collect();
    let mut concepts = concepts.to_vec();
    concepts.sort_unstable();
    concepts.dedup();
    Ok(InterventionReport {
        report_version: REPORT_VERSION,
        concepts,
        correlations,
        most_correlated,
        gap_delta: gap_after.gap - gap_before.gap,
        before: gap_before,
        after: gap_after,
        changed,
    })
}
