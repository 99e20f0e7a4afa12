use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const L2: f64 = 1e-3;
const ITERATIONS: usize = 2000;
/// Concepts whose weight reaches this share of the largest weight are flagged.
pub const FLAG_SHARE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoFlag {
    /// Logistic weights on standardized concept coefficients.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub flagged: Vec<usize>,
}

/// Stand-in for a human reviewer: fits an L2-regularized logistic
/// regression of `noisy` on standardized concept coefficients and flags the
/// concepts with a large positive weight.
pub fn auto_flag_concepts(features: ArrayView2<f64>, noisy: &[bool]) -> Result<AutoFlag> {
    let (n, d) = features.dim();
    if n != noisy.len() {
        return Err(Error::DimensionMismatch(format!("{n} rows, {} labels", noisy.len())));
    }
    if !noisy.iter().any(|&b| b) || noisy.iter().all(|&b| b) {
        return Err(Error::InvalidArgument(
            "auto-flagging needs both noisy and clean segments".into(),
        ));
    }
    let mean = features.mean_axis(Axis(0)).ok_or(Error::EmptyInput)?;
    let std = features.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    let x = (&features - &mean) / &std;
    let y = Array1::from_iter(noisy.iter().map(|&b| if b { 1.0 } else { 0.0 }));

    // standardized columns bound the logistic Hessian by (d + 1) / 4
    let step = 4.0 / (d as f64 + 1.0);
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    for _ in 0..ITERATIONS {
        let z = x.dot(&w) + b;
        let resid = z.mapv(|v| 1.0 / (1.0 + (-v).exp())) - &y;
        let grad_w = x.t().dot(&resid) / n as f64 + &w * L2;
        let grad_b = resid.sum() / n as f64;
        w.scaled_add(-step, &grad_w);
        b -= step * grad_b;
    }
    let top = w.iter().copied().fold(0.0, f64::max);
    let flagged = if top > 0.0 {
        w.iter()
            .enumerate()
            .filter(|(_, &v)| v >= FLAG_SHARE * top)
            .map(|(j, _)| j)
            .collect()
    } else {
        Vec::new()
    };
    Ok(AutoFlag {
        weights: w.to_vec(),
        intercept: b,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flags_the_concept_that_separates_noisy_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 600;
        let noisy: Vec<bool> = (0..n).map(|i| i % 5 == 0).collect();
        let x = Array2::from_shape_fn((n, 4), |(i, j)| {
            let base = rng.random::<f64>();
            if j == 2 && noisy[i] {
                base + 1.5
            } else {
                base
            }
        });
        let r = auto_flag_concepts(x.view(), &noisy).unwrap();
        assert_eq!(r.flagged, vec![2]);
    }

    #[test]
    fn one_class_labels_are_rejected() {
        let x = Array2::<f64>::zeros((4, 2));
        assert!(auto_flag_concepts(x.view(), &[false; 4]).is_err());
        assert!(auto_flag_concepts(x.view(), &[true; 4]).is_err());
    }
}
