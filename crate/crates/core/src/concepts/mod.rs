//! Concept banks learned by NMF over segment embeddings, and everything
//! derived from their coefficients: pooling, retrieval, attribution maps.

mod nmf;
mod nnls;

use std::cmp::Ordering;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::ItemRecord;

pub use nmf::{combine_banks, fit_nmf, residual_norm, NmfConfig, NmfFit};
pub use nnls::{nnls_row, transform_nnls, NNLS_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "CER")]
    Certain,
    #[serde(rename = "UNC")]
    Uncertain,
    #[serde(rename = "COMBINED")]
    Combined,
}

/// Dictionary of concept directions, one unit-norm row per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    /// `d x C`, nonnegative.
    pub components: Array2<f64>,
    pub provenance: Provenance,
    pub seed: u64,
    /// Concepts that collapsed twice during fitting and were left at zero.
    pub dead: Vec<usize>,
}

impl ConceptBank {
    pub fn new(components: Array2<f64>, provenance: Provenance, seed: u64) -> Result<Self> {
        if components.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidArgument("concept bank must be nonnegative".into()));
        }
        let dead = components
            .outer_iter()
            .enumerate()
            .filter(|(_, r)| r.iter().all(|&x| x == 0.0))
            .map(|(j, _)| j)
            .collect();
        Ok(Self {
            components,
            provenance,
            seed,
            dead,
        })
    }

    /// Number of concepts.
    pub fn len(&self) -> usize {
        self.components.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.components.ncols()
    }

    /// `W V^T` for a block of coefficient rows.
    pub fn reconstruct(&self, coefficients: ArrayView2<f64>) -> Array2<f64> {
        coefficients.dot(&self.components)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            other => Err(Error::InvalidConfig(format!("unknown pooling '{other}'"))),
        }
    }
}

/// Reduces rows of a per-segment matrix to one vector.
pub fn pool_rows(rows: ArrayView2<f64>, mode: Pooling) -> Option<Array1<f64>> {
    if rows.nrows() == 0 {
        return None;
    }
    Some(match mode {
        Pooling::Mean => rows.mean_axis(Axis(0))?,
        Pooling::Max => rows.fold_axis(Axis(0), f64::NEG_INFINITY, |&m, &x| m.max(x)),
    })
}

/// Per-item pooled coefficient vector.
pub fn pool_item(w: ArrayView2<f64>, item: &ItemRecord, mode: Pooling) -> Result<Array1<f64>> {
    let range = item.rows();
    if range.end > w.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "item '{}' needs rows up to {}, coefficients have {}",
            item.id,
            range.end,
            w.nrows()
        )));
    }
    pool_rows(w.slice(ndarray::s![range, ..]), mode).ok_or_else(|| Error::EmptyItem(item.id.clone()))
}

/// Pools every item; row `i` belongs to `items[i]`.
pub fn pool_all(w: ArrayView2<f64>, items: &[ItemRecord], mode: Pooling) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((items.len(), w.ncols()));
    for (i, item) in items.iter().enumerate() {
        out.row_mut(i).assign(&pool_item(w, item, mode)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentHit {
    pub item_id: String,
    pub segment: usize,
    pub activation: f64,
}

/// The `k` segments with the largest coefficient on `concept`, searched over
/// the given items. Ties go to the smaller `(item id, segment)`.
pub fn top_activating_segments<'a>(
    w: ArrayView2<f64>,
    items: impl IntoIterator<Item = &'a ItemRecord>,
    concept: usize,
    k: usize,
) -> Result<Vec<SegmentHit>> {
    if concept >= w.ncols() {
        return Err(Error::ConceptOutOfRange {
            concept,
            available: w.ncols(),
        });
    }
    let mut hits: Vec<SegmentHit> = items
        .into_iter()
        .flat_map(|item| {
            item.rows().enumerate().map(move |(s, row)| (item, s, row))
        })
        .map(|(item, segment, row)| SegmentHit {
            item_id: item.id.clone(),
            segment,
            activation: w[[row, concept]],
        })
        .collect();
    hits.sort_by(|a, b| {
        b.activation
            .partial_cmp(&a.activation)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.item_id.cmp(&b.item_id))
            .then_with(|| a.segment.cmp(&b.segment))
    });
    hits.truncate(k);
    Ok(hits)
}

/// Where each concept fires inside one item.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributionMap {
    /// `height x width x d`, row-major over the grid.
    Grid(Array3<f64>),
    /// `segments x d`, e.g. one row per text clause.
    Flat(Array2<f64>),
}

impl AttributionMap {
    pub fn values(&self) -> &[f64] {
        match self {
            AttributionMap::Grid(a) => a.as_slice().expect("standard layout"),
            AttributionMap::Flat(a) => a.as_slice().expect("standard layout"),
        }
    }
}

pub fn attribution_map(w: ArrayView2<f64>, item: &ItemRecord) -> Result<AttributionMap> {
    let range = item.rows();
    if range.end > w.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "item '{}' needs rows up to {}, coefficients have {}",
            item.id,
            range.end,
            w.nrows()
        )));
    }
    let rows = w.slice(ndarray::s![range, ..]).to_owned();
    Ok(match item.grid {
        Some((h, wd)) => AttributionMap::Grid(
            rows.into_shape_with_order((h, wd, w.ncols()))
                .map_err(|e| Error::InconsistentShapes(e.to_string()))?,
        ),
        None => AttributionMap::Flat(rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn item(id: &str, offset: usize, count: usize, grid: Option<(usize, usize)>) -> ItemRecord {
        ItemRecord {
            id: id.into(),
            segment_offset: offset,
            segment_count: count,
            grid,
            true_label: None,
            is_ood: None,
            is_corrupted: None,
            group_attr: None,
            thumbnail_path: None,
        }
    }

    #[test]
    fn pooling_modes() {
        let w = array![[1.0, 0.0], [0.0, 1.0], [3.0, 4.0]];
        let two = item("a", 0, 2, None);
        assert_eq!(pool_item(w.view(), &two, Pooling::Mean).unwrap(), array![0.5, 0.5]);
        assert_eq!(pool_item(w.view(), &two, Pooling::Max).unwrap(), array![1.0, 1.0]);
        let one = item("b", 2, 1, None);
        assert_eq!(pool_item(w.view(), &one, Pooling::Mean).unwrap(), array![3.0, 4.0]);
        let empty = item("c", 3, 0, None);
        assert!(matches!(pool_item(w.view(), &empty, Pooling::Mean), Err(Error::EmptyItem(_))));
    }

    #[test]
    fn top_segments_ordering() {
        let w = array![[0.1], [0.9], [0.5], [0.9], [0.2]];
        let items = [item("b", 0, 2, None), item("a", 2, 3, None)];
        let top1 = top_activating_segments(w.view(), &items, 0, 1).unwrap();
        // rows 1 (b, seg 1) and 3 (a, seg 1) tie; "a" sorts first
        assert_eq!((top1[0].item_id.as_str(), top1[0].segment), ("a", 1));
        let all = top_activating_segments(w.view(), &items, 0, 99).unwrap();
        assert_eq!(all.len(), 5);
        let order: Vec<(&str, usize)> = all.iter().map(|h| (h.item_id.as_str(), h.segment)).collect();
        assert_eq!(order, vec![("a", 1), ("b", 1), ("a", 0), ("a", 2), ("b", 0)]);
        assert!(matches!(
            top_activating_segments(w.view(), &items, 1, 1),
            Err(Error::ConceptOutOfRange { concept: 1, available: 1 })
        ));
    }

    #[test]
    fn attribution_reshapes_grid_row_major() {
        let w = Array2::from_shape_fn((4, 3), |(r, c)| (r * 3 + c) as f64);
        let it = item("x", 0, 4, Some((2, 2)));
        match attribution_map(w.view(), &it).unwrap() {
            AttributionMap::Grid(g) => {
                assert_eq!(g.dim(), (2, 2, 3));
                assert_eq!(g[[1, 0, 2]], w[[2, 2]]);
                assert_eq!(g[[0, 1, 0]], w[[1, 0]]);
            }
            other => panic!("expected grid, got {other:?}"),
        }
        let text = item("t", 1, 3, None);
        match attribution_map(w.view(), &text).unwrap() {
            AttributionMap::Flat(f) => assert_eq!(f, w.slice(ndarray::s![1..4, ..])),
            other => panic!("expected flat, got {other:?}"),
        }
        let zeros = Array2::zeros((4, 2));
        assert!(attribution_map(zeros.view(), &it).unwrap().values().iter().all(|&v| v == 0.0));
    }
}
