//! Total Sobol indices with the Jansen estimator.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DESIGN_ROWS: usize = 64;
const ZERO_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sequence {
    /// Owen-scrambled Sobol points.
    #[default]
    Sobol,
    /// Plain i.i.d. uniform draws.
    Random,
}

/// Two independent `n x d` blocks of masks in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDesign {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub seed: u64,
    pub sequence: Sequence,
}

impl MaskDesign {
    pub fn new(n: usize, d: usize, seed: u64, sequence: Sequence) -> Result<Self> {
        if n < MIN_DESIGN_ROWS {
            return Err(Error::InvalidArgument(format!(
                "mask design needs at least {MIN_DESIGN_ROWS} rows, got {n}"
            )));
        }
        let (a, b) = match sequence {
            Sequence::Sobol => {
                if 2 * d > sobol_burley::NUM_DIMENSIONS as usize {
                    return Err(Error::InvalidArgument(format!(
                        "Sobol design supports at most {} concepts",
                        sobol_burley::NUM_DIMENSIONS / 2
                    )));
                }
                u32::try_from(n)
                    .map_err(|_| Error::InvalidArgument("too many design rows".into()))?;
                let scramble = fold_seed(seed);
                let point = |i: usize, dim: usize| {
                    f64::from(sobol_burley::sample(i as u32, dim as u32, scramble))
                };
                (
                    Array2::from_shape_fn((n, d), |(i, j)| point(i, j)),
                    Array2::from_shape_fn((n, d), |(i, j)| point(i, d + j)),
                )
            }
            Sequence::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
                let b = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
                (a, b)
            }
        };
        Ok(Self {
            a,
            b,
            seed,
            sequence,
        })
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn dims(&self) -> usize {
        self.a.ncols()
    }
}

fn fold_seed(seed: u64) -> u32 {
    let mixed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    (mixed ^ (mixed >> 32)) as u32
}

/// Jansen estimate of every total index of `h` over the design:
///
/// `S_i = sum_n (h(B_n) - h(B_n with coordinate i from A_n))^2 / (2 n Var(h))`
///
/// `Var(h)` is taken over the pooled `h(A)` and `h(B)` evaluations. A
/// response with variance below `1e-12` has all indices zero.
pub fn sobol_total_indices<F>(h: F, design: &MaskDesign) -> Result<Vec<f64>>
where
    F: Fn(ArrayView1<f64>) -> f64,
{
    let (n, d) = design.a.dim();
    let eval = |row: ArrayView1<f64>, at: usize| {
        let v = h(row);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteEvaluation(at))
        }
    };
    let mut fa = Vec::with_capacity(n);
    let mut fb = Vec::with_capacity(n);
    for r in 0..n {
        fa.push(eval(design.a.row(r), r)?);
        fb.push(eval(design.b.row(r), r)?);
    }
    let all = fa.iter().chain(&fb);
    let mean = all.clone().sum::<f64>() / (2 * n) as f64;
    let var = all.map(|v| (v - mean).powi(2)).sum::<f64>() / (2 * n) as f64;
    if var < ZERO_VARIANCE {
        return Ok(vec![0.0; d]);
    }

    let mut sums = vec![0.0; d];
    let mut mixed = ndarray::Array1::zeros(d);
    for (r, &fb_r) in fb.iter().enumerate() {
        mixed.assign(&design.b.row(r));
        for (i, sum) in sums.iter_mut().enumerate() {
            let saved = mixed[i];
            mixed[i] = design.a[[r, i]];
            let diff = fb_r - eval(mixed.view(), r)?;
            *sum += diff * diff;
            mixed[i] = saved;
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| s / (2.0 * n as f64 * var))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_variable_function() {
        let design = MaskDesign::new(4096, 3, 1, Sequence::Sobol).unwrap();
        let s = sobol_total_indices(|m| m[0], &design).unwrap();
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(s[1], 0.0, epsilon = 0.02);
        assert_abs_diff_eq!(s[2], 0.0, epsilon = 0.02);
    }

    #[test]
    fn equal_additive_terms_split_evenly() {
        // Var(m0 + m1) = 1/12 + 1/12 with each term contributing half
        let design = MaskDesign::new(4096, 2, 5, Sequence::Sobol).unwrap();
        let s = sobol_total_indices(|m| m[0] + m[1], &design).unwrap();
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 0.02);
        assert_abs_diff_eq!(s[1], 0.5, epsilon = 0.02);
    }

    #[test]
    fn constant_response_gives_zeros() {
        let design = MaskDesign::new(64, 4, 0, Sequence::Random).unwrap();
        assert_eq!(sobol_total_indices(|_| 3.5, &design).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn non_finite_response_is_an_error() {
        let design = MaskDesign::new(64, 2, 0, Sequence::Sobol).unwrap();
        assert!(matches!(
            sobol_total_indices(|m| if m[0] > 0.5 { f64::NAN } else { 0.0 }, &design),
            Err(Error::NonFiniteEvaluation(_))
        ));
    }

    #[test]
    fn design_validation_and_reproducibility() {
        assert!(MaskDesign::new(63, 2, 0, Sequence::Sobol).is_err());
        assert!(MaskDesign::new(64, 129, 0, Sequence::Sobol).is_err());
        let a = MaskDesign::new(128, 5, 42, Sequence::Sobol).unwrap();
        assert_eq!(a, MaskDesign::new(128, 5, 42, Sequence::Sobol).unwrap());
        assert_ne!(a.a, MaskDesign::new(128, 5, 43, Sequence::Sobol).unwrap().a);
        assert!(a.a.iter().chain(a.b.iter()).all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn permuting_inputs_permutes_indices() {
        let design = MaskDesign::new(1024, 3, 8, Sequence::Sobol).unwrap();
        let h = |m: ArrayView1<f64>| 3.0 * m[0] + m[1] * m[2];
        let s = sobol_total_indices(h, &design).unwrap();
        // swap coordinates 0 and 2 in both the design and the function
        let mut swapped = design.clone();
        for block in [&mut swapped.a, &mut swapped.b] {
            let c0 = block.column(0).to_owned();
            let c2 = block.column(2).to_owned();
            block.column_mut(0).assign(&c2);
            block.column_mut(2).assign(&c0);
        }
        let hs = |m: ArrayView1<f64>| 3.0 * m[2] + m[1] * m[0];
        let t = sobol_total_indices(hs, &swapped).unwrap();
        assert_abs_diff_eq!(s[0], t[2], epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], t[1], epsilon = 1e-12);
        assert_abs_diff_eq!(s[2], t[0], epsilon = 1e-12);
    }
}
