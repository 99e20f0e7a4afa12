//! Nonnegative least squares against a fixed concept bank.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use super::ConceptBank;
use crate::error::{Error, Result};

pub const NNLS_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 10_000;

/// Coefficients `w >= 0` minimizing `||a - w V||` for every row `a`.
pub fn transform_nnls(a: ArrayView2<f64>, bank: &ConceptBank) -> Result<Array2<f64>> {
    if a.ncols() != bank.channels() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} channels, bank has {}",
            a.ncols(),
            bank.channels()
        )));
    }
    let gram = bank.components.dot(&bank.components.t());
    let rhs = a.dot(&bank.components.t());
    let rows: Vec<Array1<f64>> = (0..rhs.nrows())
        .into_par_iter()
        .map(|i| nnls_row(gram.view(), rhs.row(i)))
        .collect();
    let mut out = Array2::zeros((a.nrows(), bank.len()));
    for (mut dst, src) in out.outer_iter_mut().zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}

/// Cyclic coordinate descent on `1/2 w^T G w - b^T w` subject to `w >= 0`,
/// starting from zero. Each coordinate step is an exact minimization, so the
/// objective never rises above its value at `w = 0`.
pub fn nnls_row(gram: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let d = b.len();
    let mut w = Array1::<f64>::zeros(d);
    // gradient G w - b, kept up to date incrementally
    let mut grad = b.mapv(|x| -x);
    for _ in 0..MAX_SWEEPS {
        let mut max_step = 0.0f64;
        for j in 0..d {
            let g = gram[[j, j]];
            if g <= 0.0 {
                continue;
            }
            let new = (w[j] - grad[j] / g).max(0.0);
            let step = new - w[j];
            if step != 0.0 {
                w[j] = new;
                grad.scaled_add(step, &gram.column(j));
                max_step = max_step.max(step.abs());
            }
        }
        if max_step < NNLS_TOL {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::Provenance;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};

    fn bank(v: Array2<f64>) -> ConceptBank {
        ConceptBank::new(v, Provenance::Uncertain, 0).unwrap()
    }

    #[test]
    fn identity_dictionary_returns_input() {
        let a = array![[0.3, 2.0, 0.0], [1.0, 0.0, 5.5]];
        let w = transform_nnls(a.view(), &bank(Array2::eye(3))).unwrap();
        for (x, y) in w.iter().zip(a.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_concept_match_is_unit_vector() {
        let v = array![[0.6, 0.8, 0.0], [0.0, 0.6, 0.8], [0.6, 0.0, 0.8]];
        let a = v.row(1).insert_axis(Axis(0)).to_owned();
        let w = transform_nnls(a.view(), &bank(v)).unwrap();
        assert_abs_diff_eq!(w[[0, 0]], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(w[[0, 1]], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(w[[0, 2]], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_row_gives_zero_coefficients() {
        let v = array![[1.0, 1.0], [0.0, 2.0]];
        let w = transform_nnls(Array2::zeros((1, 2)).view(), &bank(v)).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn channel_mismatch() {
        assert!(matches!(
            transform_nnls(Array2::zeros((1, 3)).view(), &bank(Array2::eye(2))),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
