use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::concepts::{pool_rows, ConceptBank, Pooling};
use crate::error::{Error, Result};
use crate::store::ItemRecord;
use crate::uncertainty::HeadParams;

use super::ranking::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct Repredictions {
    pub predicted: Vec<usize>,
    /// `n_items x K`
    pub probabilities: Array2<f64>,
}

/// Removes the `ablate` concepts from every segment's reconstruction `W V`,
/// pools per item and runs the head without dropout.
pub fn concept_ablation_repredict(
    w: ArrayView2<f64>,
    items: &[ItemRecord],
    bank: &ConceptBank,
    ablate: &[usize],
    head: &HeadParams,
    pooling: Pooling,
) -> Result<Repredictions> {
    if w.ncols() != bank.len() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have {} concepts, bank has {}",
            w.ncols(),
            bank.len()
        )));
    }
    if let Some(&c) = ablate.iter().find(|&&c| c >= bank.len()) {
        return Err(Error::ConceptOutOfRange {
            concept: c,
            available: bank.len(),
        });
    }
    if bank.channels() != head.channels() {
        return Err(Error::DimensionMismatch(format!(
            "bank has {} channels, head expects {}",
            bank.channels(),
            head.channels()
        )));
    }
    let mut kept = w.to_owned();
    for &c in ablate {
        kept.column_mut(c).fill(0.0);
    }
    let mut probabilities = Array2::zeros((items.len(), head.n_classes()));
    let mut predicted = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let range = item.rows();
        if range.end > kept.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "item '{}' needs rows up to {}, coefficients have {}",
                item.id,
                range.end,
                kept.nrows()
            )));
        }
        let rows = bank.reconstruct(kept.slice(ndarray::s![range, ..]));
        let pooled = pool_rows(rows.view(), pooling).ok_or_else(|| Error::EmptyItem(item.id.clone()))?;
        let p = head.forward(pooled.view())?;
        predicted.push(argmax(p.iter().copied()));
        probabilities.row_mut(i).assign(&p);
    }
    Ok(Repredictions {
        predicted,
        probabilities,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rate {
    Tpr,
    Fpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub class: usize,
    pub rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualizedOdds {
    /// Class-averaged `max(|dTPR|, |dFPR|)`.
    pub gap: f64,
    /// Per-class gap, `None` when neither rate had support in both groups.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<SkippedCell>,
    /// Items left out for lacking a label or a group attribute.
    pub excluded: usize,
}

/// One-vs-rest equalized-odds gap between `group_attr` 0 and 1.
pub fn equalized_odds_gap(
    predicted: &[usize],
    labels: &[Option<usize>],
    group_attr: &[Option<u8>],
    n_classes: usize,
) -> Result<EqualizedOdds> {
    if predicted.len() != labels.len() || predicted.len() != group_attr.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions, {} labels, {} attributes",
            predicted.len(),
            labels.len(),
            group_attr.len()
        )));
    }
    if group_attr.iter().all(Option::is_none) {
        return Err(Error::MissingGroupAttr("no item carries group_attr".into()));
    }
    let rows: Vec<(usize, usize, usize)> = predicted
        .iter()
        .zip(labels)
        .zip(group_attr)
        .filter_map(|((&p, &y), &g)| Some((p, y?, usize::from(g? != 0))))
        .collect();
    let excluded = predicted.len() - rows.len();

    let mut per_class = Vec::with_capacity(n_classes);
    let mut skipped = Vec::new();
    for class in 0..n_classes {
        // [group][positive?] -> (hits, support)
        let mut cells = [[(0usize, 0usize); 2]; 2];
        for &(p, y, g) in &rows {
            let cell = &mut cells[g][usize::from(y == class)];
            cell.0 += usize::from(p == class);
            cell.1 += 1;
        }
        let mut gaps = Vec::new();
        for (positive, rate) in [(1, Rate::Tpr), (0, Rate::Fpr)] {
            let (a, b) = (cells[0][positive], cells[1][positive]);
            if a.1 == 0 || b.1 == 0 {
                skipped.push(SkippedCell { class, rate });
            } else {
                gaps.push((a.0 as f64 / a.1 as f64 - b.0 as f64 / b.1 as f64).abs());
            }
        }
        per_class.push(gaps.into_iter().reduce(f64::max));
    }
    let supported: Vec<f64> = per_class.iter().flatten().copied().collect();
    let gap = if supported.is_empty() {
        0.0
    } else {
        supported.iter().sum::<f64>() / supported.len() as f64
    };
    Ok(EqualizedOdds {
        gap,
        per_class,
        skipped,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::Provenance;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn item(id: &str, offset: usize, count: usize) -> ItemRecord {
        ItemRecord {
            id: id.into(),
            segment_offset: offset,
            segment_count: count,
            grid: None,
            true_label: None,
            is_ood: None,
            is_corrupted: None,
            group_attr: None,
            thumbnail_path: None,
        }
    }

    #[test]
    fn perfect_predictions_have_no_gap() {
        let y = [0, 1, 2, 0, 1, 2];
        let labels: Vec<Option<usize>> = y.iter().map(|&v| Some(v)).collect();
        let g = [Some(0), Some(0), Some(0), Some(1), Some(1), Some(1)];
        let r = equalized_odds_gap(&y, &labels, &g, 3).unwrap();
        assert_eq!(r.gap, 0.0);
        assert!(r.skipped.is_empty());
        assert!(matches!(equalized_odds_gap(&y, &labels, &[None; 6], 3), Err(Error::MissingGroupAttr(_))));
    }

    #[test]
    fn group_independent_errors_have_no_gap() {
        // same labels and same predictions in both groups
        let pred = [0, 1, 1, 0, 1, 1];
        let labels = [Some(0), Some(0), Some(1), Some(0), Some(0), Some(1)];
        let g = [Some(0), Some(0), Some(0), Some(1), Some(1), Some(1)];
        assert_eq!(equalized_odds_gap(&pred, &labels, &g, 2).unwrap().gap, 0.0);
    }

    #[test]
    fn hand_built_eight_items() {
        // group 0: labels 0,0,1,1 predictions 0,1,1,1
        // group 1: labels 0,0,1,1 predictions 0,0,0,1
        let pred = [0, 1, 1, 1, 0, 0, 0, 1];
        let labels: Vec<Option<usize>> = [0, 0, 1, 1, 0, 0, 1, 1].iter().map(|&v| Some(v)).collect();
        let g = [Some(0), Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), Some(1)];
        let r = equalized_odds_gap(&pred, &labels, &g, 2).unwrap();
        // class 1: TPR 1.0 vs 0.5, FPR 0.5 vs 0.0 -> 0.5
        // class 0: TPR 0.5 vs 1.0, FPR 0.0 vs 0.5 -> 0.5
        assert_eq!(r.per_class, vec![Some(0.5), Some(0.5)]);
        assert_abs_diff_eq!(r.gap, 0.5);

        // make group 1's class-1 errors vanish on one item: class 1 TPR gap 0
        let mut pred2 = pred;
        pred2[6] = 1;
        let r = equalized_odds_gap(&pred2, &labels, &g, 2).unwrap();
        // class 1: TPR 1 vs 1, FPR 0.5 vs 0 -> 0.5; class 0: TPR 0.5 vs 1, FPR 0 vs 0 -> 0.5
        assert_eq!(r.per_class, vec![Some(0.5), Some(0.5)]);
    }

    #[test]
    fn unsupported_cells_are_reported() {
        // class 2 never appears as a label: its TPR cell has no support
        let pred = [0, 1, 0, 1];
        let labels = [Some(0), Some(1), Some(0), Some(1)];
        let g = [Some(0), Some(0), Some(1), Some(1)];
        let r = equalized_odds_gap(&pred, &labels, &g, 3).unwrap();
        assert_eq!(r.skipped, vec![SkippedCell { class: 2, rate: Rate::Tpr }]);
        assert_eq!(r.per_class[2], Some(0.0));
    }

    fn setup() -> (Array2<f64>, Vec<ItemRecord>, ConceptBank, HeadParams) {
        // concept 0 drives class 0, concept 1 drives class 1, concept 2 is unused
        let bank = ConceptBank::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], Provenance::Combined, 0)
            .unwrap();
        let head = HeadParams::new(array![[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]], array![0.0, 0.1], 0.0).unwrap();
        let w = array![[1.0, 0.2, 0.0], [0.9, 0.0, 0.0], [0.2, 1.0, 0.0], [0.6, 0.5, 0.0]];
        let items = vec![item("a", 0, 2), item("b", 2, 1), item("c", 3, 1)];
        (w, items, bank, head)
    }

    #[test]
    fn empty_and_no_op_ablations_are_identity() {
        let (w, items, bank, head) = setup();
        let base = concept_ablation_repredict(w.view(), &items, &bank, &[], &head, Pooling::Mean).unwrap();
        assert_eq!(base.predicted, vec![0, 1, 0]);
        let noop = concept_ablation_repredict(w.view(), &items, &bank, &[2], &head, Pooling::Mean).unwrap();
        assert_eq!(base, noop);
    }

    #[test]
    fn ablating_everything_leaves_the_bias() {
        let (w, items, bank, head) = setup();
        let r = concept_ablation_repredict(w.view(), &items, &bank, &[0, 1, 2], &head, Pooling::Max).unwrap();
        let mut expected: Array1<f64> = head.bias.clone();
        crate::uncertainty::softmax_in_place(expected.view_mut());
        for row in r.probabilities.outer_iter() {
            assert_abs_diff_eq!(row[0], expected[0], epsilon = 1e-15);
        }
        assert_eq!(r.predicted, vec![1, 1, 1]);
    }

    #[test]
    fn ablation_flips_items_whose_margin_came_from_the_concept() {
        let (w, items, bank, head) = setup();
        let r = concept_ablation_repredict(w.view(), &items, &bank, &[0], &head, Pooling::Mean).unwrap();
        // "a" and "c" were class 0 only through concept 0; "b" was already class 1
        assert_eq!(r.predicted, vec![1, 1, 1]);
        assert!(matches!(
            concept_ablation_repredict(w.view(), &items, &bank, &[3], &head, Pooling::Mean),
            Err(Error::ConceptOutOfRange { concept: 3, available: 3 })
        ));
    }
}
