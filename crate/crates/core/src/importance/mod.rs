//! Concept importance for the uncertainty response.
//!
//! A local importance vector holds, for one item, the total Sobol index of
//! every concept of a bank with respect to
//! `h(m) = f(u(head(pool((W_i * m) V))))`: the item's concept coefficients
//! are scaled by a mask `m in [0, 1]^d`, reconstructed into embedding space,
//! pooled, pushed through the dropout head, summarized by an uncertainty
//! measure and mapped through the GMM posterior `f`.

mod sobol;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::concepts::{pool_rows, ConceptBank, Pooling};
use crate::error::{Error, Result};
use crate::grouping::{unc_posterior, Gmm2, Group};
use crate::store::ItemRecord;
use crate::uncertainty::{
    entropy_bits, mc_head_forward, softmax_in_place, DropoutMaskSet, HeadParams, Measure,
    UncertaintyScores,
};

pub use sobol::{sobol_total_indices, MaskDesign, Sequence, MIN_DESIGN_ROWS};

/// Estimator noise tolerated below zero before a value is suspicious.
pub const NEGATIVE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scope {
    Local { item_id: String },
    Global { group: Group },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    /// Raw estimates; may dip slightly below zero.
    pub values: Vec<f64>,
    pub scope: Scope,
}

impl ImportanceVector {
    /// Values as reported: negatives clamped to zero.
    pub fn clamped(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.max(0.0)).collect()
    }
}

/// The uncertainty response of the head for one concept bank.
pub struct UncertaintyResponse<'a> {
    bank: &'a ConceptBank,
    head: &'a HeadParams,
    masks: &'a DropoutMaskSet,
    gmm: &'a Gmm2,
    measure: Measure,
    pooling: Pooling,
    /// One `d x K` matrix `V diag(m_n) W_head` per dropout mask; with mean
    /// pooling the whole chain up to the softmax is linear in the mask.
    projected: Vec<Array2<f64>>,
}

impl<'a> UncertaintyResponse<'a> {
    pub fn new(
        bank: &'a ConceptBank,
        head: &'a HeadParams,
        masks: &'a DropoutMaskSet,
        gmm: &'a Gmm2,
        measure: Measure,
        pooling: Pooling,
    ) -> Result<Self> {
        if bank.channels() != head.channels() || masks.channels() != head.channels() {
            return Err(Error::DimensionMismatch(format!(
                "bank has {} channels, head {}, dropout masks {}",
                bank.channels(),
                head.channels(),
                masks.channels()
            )));
        }
        let projected = match pooling {
            Pooling::Mean => masks
                .masks()
                .outer_iter()
                .map(|m| {
                    let scaled = &bank.components * &m.insert_axis(Axis(0));
                    scaled.dot(&head.weights)
                })
                .collect(),
            Pooling::Max => Vec::new(),
        };
        Ok(Self {
            bank,
            head,
            masks,
            gmm,
            measure,
            pooling,
            projected,
        })
    }

    pub fn concepts(&self) -> usize {
        self.bank.len()
    }

    /// `h(m)` computed literally: mask, reconstruct, pool, dropout head.
    pub fn evaluate_reference(&self, rows: ArrayView2<f64>, mask: ArrayView1<f64>) -> Result<f64> {
        let masked = &rows * &mask.insert_axis(Axis(0));
        let recon = self.bank.reconstruct(masked.view());
        let embedding = pool_rows(recon.view(), self.pooling).ok_or(Error::EmptyInput)?;
        let samples = mc_head_forward(embedding.view(), self.head, self.masks)?;
        let u = UncertaintyScores::from_samples(samples.view())?.get(self.measure);
        Ok(unc_posterior(self.gmm, u))
    }

    fn evaluate_mean_pooled(&self, pooled: ArrayView1<f64>, mask: ArrayView1<f64>, buf: &mut Buffers) -> f64 {
        let k = self.head.n_classes();
        buf.coeff.assign(&pooled);
        buf.coeff *= &mask;
        buf.mean.fill(0.0);
        let mut sample_entropy = 0.0;
        for proj in &self.projected {
            buf.logits.assign(&self.head.bias);
            for (j, &c) in buf.coeff.iter().enumerate() {
                if c != 0.0 {
                    buf.logits.scaled_add(c, &proj.row(j));
                }
            }
            softmax_in_place(buf.logits.view_mut());
            if self.measure != Measure::Total {
                sample_entropy += entropy_bits(buf.logits.view());
            }
            buf.mean += &buf.logits;
        }
        let n = self.projected.len() as f64;
        buf.mean /= n;
        debug_assert_eq!(buf.mean.len(), k);
        let total = entropy_bits(buf.mean.view());
        let aleatoric = sample_entropy / n;
        let u = match self.measure {
            Measure::Total => total,
            Measure::Aleatoric => aleatoric,
            Measure::Epistemic => total - aleatoric,
        };
        unc_posterior(self.gmm, u)
    }

    /// `h` as a closure over mask rows for one item's coefficient rows.
    pub fn local_importance(
        &self,
        item: &ItemRecord,
        coefficients: ArrayView2<f64>,
        design: &MaskDesign,
    ) -> Result<ImportanceVector> {
        if coefficients.ncols() != self.bank.len() || design.dims() != self.bank.len() {
            return Err(Error::DimensionMismatch(format!(
                "bank has {} concepts, coefficients {}, design {}",
                self.bank.len(),
                coefficients.ncols(),
                design.dims()
            )));
        }
        let range = item.rows();
        if range.end > coefficients.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "item '{}' rows exceed coefficient matrix",
                item.id
            )));
        }
        let rows = coefficients.slice(s![range, ..]);
        if rows.nrows() == 0 {
            return Err(Error::EmptyItem(item.id.clone()));
        }
        let values = match self.pooling {
            Pooling::Mean => {
                let pooled = rows.mean_axis(Axis(0)).expect("non-empty item");
                let buf = std::cell::RefCell::new(Buffers::new(self.bank.len(), self.head.n_classes()));
                sobol_total_indices(
                    |m| self.evaluate_mean_pooled(pooled.view(), m, &mut buf.borrow_mut()),
                    design,
                )?
            }
            Pooling::Max => {
                let failure = std::cell::Cell::new(None);
                let out = sobol_total_indices(
                    |m| match self.evaluate_reference(rows, m) {
                        Ok(v) => v,
                        Err(e) => {
                            failure.set(Some(e.to_string()));
                            f64::NAN
                        }
                    },
                    design,
                );
                if let Some(msg) = failure.take() {
                    return Err(Error::InvalidArgument(msg));
                }
                out?
            }
        };
        Ok(ImportanceVector {
            values,
            scope: Scope::Local {
                item_id: item.id.clone(),
            },
        })
    }
}

struct Buffers {
    coeff: Array1<f64>,
    logits: Array1<f64>,
    mean: Array1<f64>,
}

impl Buffers {
    fn new(d: usize, k: usize) -> Self {
        Self {
            coeff: Array1::zeros(d),
            logits: Array1::zeros(k),
            mean: Array1::zeros(k),
        }
    }
}

/// Local importance of one item with respect to one bank.
#[allow(clippy::too_many_arguments)]
pub fn local_importance(
    item: &ItemRecord,
    coefficients: ArrayView2<f64>,
    bank: &ConceptBank,
    head: &HeadParams,
    masks: &DropoutMaskSet,
    gmm: &Gmm2,
    measure: Measure,
    pooling: Pooling,
    design: &MaskDesign,
) -> Result<ImportanceVector> {
    UncertaintyResponse::new(bank, head, masks, gmm, measure, pooling)?
        .local_importance(item, coefficients, design)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupImportance {
    pub values: Vec<f64>,
    pub members: usize,
    /// Set when the group had no members; `values` is then all zero.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub certain: GroupImportance,
    pub uncertain: GroupImportance,
}

impl GlobalImportance {
    pub fn get(&self, group: Group) -> &GroupImportance {
        match group {
            Group::Certain => &self.certain,
            Group::Uncertain => &self.uncertain,
        }
    }
}

/// Mean of the local vectors within each predicted group. Item `i`'s local
/// vector is measured against its own group's bank, hence the two lengths.
pub fn global_importance(
    locals: &[ImportanceVector],
    groups: &[Group],
    d_cer: usize,
    d_unc: usize,
) -> Result<GlobalImportance> {
    if locals.len() != groups.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} local vectors for {} group labels",
            locals.len(),
            groups.len()
        )));
    }
    let average = |group: Group, d: usize| -> Result<GroupImportance> {
        let mut sum = vec![0.0; d];
        let mut members = 0usize;
        for (local, _) in locals.iter().zip(groups).filter(|(_, g)| **g == group) {
            if local.values.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "local vector of length {} in a group with {} concepts",
                    local.values.len(),
                    d
                )));
            }
            sum.iter_mut().zip(&local.values).for_each(|(s, v)| *s += v);
            members += 1;
        }
        if members > 0 {
            sum.iter_mut().for_each(|s| *s /= members as f64);
        }
        Ok(GroupImportance {
            values: sum,
            members,
            empty: members == 0,
        })
    };
    Ok(GlobalImportance {
        certain: average(Group::Certain, d_cer)?,
        uncertain: average(Group::Uncertain, d_unc)?,
    })
}
