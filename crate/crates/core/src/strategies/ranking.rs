use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{Measure, UncertaintyScores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterMethod {
    OursImportance,
    #[serde(rename = "OursNMF")]
    OursNmf,
    BaselineTotal,
    BaselineAleatoric,
    BaselineEpistemic,
}

impl FilterMethod {
    pub const ALL: [FilterMethod; 5] = [
        FilterMethod::OursImportance,
        FilterMethod::OursNmf,
        FilterMethod::BaselineTotal,
        FilterMethod::BaselineAleatoric,
        FilterMethod::BaselineEpistemic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterMethod::OursImportance => "OursImportance",
            FilterMethod::OursNmf => "OursNMF",
            FilterMethod::BaselineTotal => "BaselineTotal",
            FilterMethod::BaselineAleatoric => "BaselineAleatoric",
            FilterMethod::BaselineEpistemic => "BaselineEpistemic",
        }
    }

    pub fn baseline_measure(self) -> Option<Measure> {
        match self {
            FilterMethod::BaselineTotal => Some(Measure::Total),
            FilterMethod::BaselineAleatoric => Some(Measure::Aleatoric),
            FilterMethod::BaselineEpistemic => Some(Measure::Epistemic),
            _ => None,
        }
    }
}

impl std::str::FromStr for FilterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown filter method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectMethod {
    ConceptOnly,
    Weighted,
    Total,
    Aleatoric,
    Epistemic,
}

impl RejectMethod {
    pub const ALL: [RejectMethod; 5] = [
        RejectMethod::ConceptOnly,
        RejectMethod::Weighted,
        RejectMethod::Total,
        RejectMethod::Aleatoric,
        RejectMethod::Epistemic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RejectMethod::ConceptOnly => "ConceptOnly",
            RejectMethod::Weighted => "Weighted",
            RejectMethod::Total => "Total",
            RejectMethod::Aleatoric => "Aleatoric",
            RejectMethod::Epistemic => "Epistemic",
        }
    }

    pub fn baseline_measure(self) -> Option<Measure> {
        match self {
            RejectMethod::Total => Some(Measure::Total),
            RejectMethod::Aleatoric => Some(Measure::Aleatoric),
            RejectMethod::Epistemic => Some(Measure::Epistemic),
            _ => None,
        }
    }
}

/// An ordering of item indices, first entry handled (filtered or rejected)
/// first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking<M> {
    pub method: M,
    pub order: Vec<usize>,
}

pub type FilterRanking = Ranking<FilterMethod>;
pub type RejectionRanking = Ranking<RejectMethod>;

/// Sorts `candidates` by descending score; ties go to the smaller item id.
pub fn rank_descending(candidates: &[usize], score: impl Fn(usize) -> f64, ids: &[&str]) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = candidates.iter().map(|&i| (i, score(i))).collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a.0].cmp(ids[b.0]))
    });
    scored.into_iter().map(|(i, _)| i).collect()
}

/// Ranks uncertain-group items by how strongly they carry the flagged
/// concepts: `features` holds one row per dataset item and one column per
/// uncertain-bank concept (local importances or pooled NMF coefficients).
pub fn noise_filter_ranking(
    candidates: &[usize],
    features: ArrayView2<f64>,
    flagged: &[usize],
    method: FilterMethod,
    ids: &[&str],
) -> Result<FilterRanking> {
    if flagged.is_empty() {
        return Err(Error::EmptyFlagSet);
    }
    if let Some(&c) = flagged.iter().find(|&&c| c >= features.ncols()) {
        return Err(Error::ConceptOutOfRange {
            concept: c,
            available: features.ncols(),
        });
    }
    check_candidates(candidates, features.nrows())?;
    let order = rank_descending(
        candidates,
        |i| flagged.iter().map(|&c| features[[i, c]]).sum(),
        ids,
    );
    Ok(Ranking { method, order })
}

/// Descending by one uncertainty measure.
pub fn uncertainty_order(
    candidates: &[usize],
    scores: &[UncertaintyScores],
    measure: Measure,
    ids: &[&str],
) -> Result<Vec<usize>> {
    check_candidates(candidates, scores.len())?;
    Ok(rank_descending(candidates, |i| scores[i].get(measure), ids))
}

pub fn baseline_uncertainty_ranking(
    candidates: &[usize],
    scores: &[UncertaintyScores],
    measure: Measure,
    ids: &[&str],
) -> Result<FilterRanking> {
    let method = match measure {
        Measure::Total => FilterMethod::BaselineTotal,
        Measure::Aleatoric => FilterMethod::BaselineAleatoric,
        Measure::Epistemic => FilterMethod::BaselineEpistemic,
    };
    Ok(Ranking {
        method,
        order: uncertainty_order(candidates, scores, measure, ids)?,
    })
}

fn check_candidates(candidates: &[usize], n: usize) -> Result<()> {
    match candidates.iter().find(|&&i| i >= n) {
        Some(i) => Err(Error::DimensionMismatch(format!(
            "candidate item {i} outside {n} rows"
        ))),
        None => Ok(()),
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Concept-based rejection over the combined bank `[V_cer, V_unc]`.
///
/// `pooled` has one row per item and `d_cer + d_unc` columns. The dominant
/// concept `c* = argmax` of each row decides the item's block.
pub fn rejection_ranking(
    pooled: ArrayView2<f64>,
    global_cer: &[f64],
    global_unc: &[f64],
    f_values: &[f64],
    method: RejectMethod,
    ids: &[&str],
) -> Result<RejectionRanking> {
    let d_cer = global_cer.len();
    if pooled.ncols() != d_cer + global_unc.len() {
        return Err(Error::DimensionMismatch(format!(
            "pooled coefficients have {} columns, banks have {} + {} concepts",
            pooled.ncols(),
            d_cer,
            global_unc.len()
        )));
    }
    if pooled.nrows() != f_values.len() || pooled.nrows() != ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} pooled rows, {} f values, {} ids",
            pooled.nrows(),
            f_values.len(),
            ids.len()
        )));
    }
    let dominant: Vec<usize> = pooled
        .outer_iter()
        .map(|row| argmax(row.iter().copied()))
        .collect();
    let all: Vec<usize> = (0..pooled.nrows()).collect();
    let order = match method {
        RejectMethod::Weighted => rank_descending(
            &all,
            |i| {
                if dominant[i] >= d_cer {
                    f_values[i]
                } else {
                    -f_values[i]
                }
            },
            ids,
        ),
        RejectMethod::ConceptOnly => {
            let (unc, cer): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| dominant[i] >= d_cer);
            let mut order = rank_descending(&unc, |i| global_unc[dominant[i] - d_cer], ids);
            // ascending certain importance: negate for the shared sorter
            order.extend(rank_descending(&cer, |i| -global_cer[dominant[i]], ids));
            order
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "{} is an uncertainty baseline, not a concept strategy",
                other.name()
            )))
        }
    };
    Ok(Ranking { method, order })
}
