//! Nonnegative matrix factorization `A ~ W V^T` by hierarchical alternating
//! least squares (HALS).

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConceptBank, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 400,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NmfFit {
    pub bank: ConceptBank,
    /// `rows x d`, scaled so that every bank row has unit norm.
    pub coefficients: Array2<f64>,
    /// `||A - W V^T||_F` after initialization and after every sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl NmfFit {
    pub fn relative_error(&self, a: ArrayView2<f64>) -> f64 {
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        residual_norm(a, self.coefficients.view(), self.bank.components.t()) / norm
    }
}

/// `||A - W V^T||_F` with `v` given as `C x d`.
pub fn residual_norm(a: ArrayView2<f64>, w: ArrayView2<f64>, v: ArrayView2<f64>) -> f64 {
    let recon = w.dot(&v.t());
    Zip::from(a)
        .and(&recon)
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
        .sqrt()
}

pub fn fit_nmf(
    a: ArrayView2<f64>,
    d: usize,
    provenance: Provenance,
    config: &NmfConfig,
) -> Result<NmfFit> {
    let (rows, channels) = a.dim();
    if rows == 0 || channels == 0 {
        return Err(Error::EmptyInput);
    }
    if a.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidArgument("NMF input must be nonnegative".into()));
    }
    let nonzero_rows = a.outer_iter().filter(|r| r.iter().any(|&x| x > 0.0)).count();
    if nonzero_rows == 0 {
        return Err(Error::EmptyInput);
    }
    let max = nonzero_rows.min(channels);
    if d == 0 || d > max {
        return Err(Error::RankTooHigh { requested: d, max });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = (a.mean().unwrap_or(0.0) / d as f64).sqrt();
    let mut w = Array2::from_shape_fn((rows, d), |_| rng.random::<f64>() * scale);
    let mut v = Array2::from_shape_fn((channels, d), |_| rng.random::<f64>() * scale);

    let mut trace = vec![residual_norm(a, w.view(), v.view())];
    let mut reseeded = vec![false; d];
    let mut dead = vec![false; d];
    let mut iterations = 0;
    while iterations < config.max_iter {
        hals_update(a, &mut w, v.view());
        hals_update(a.t(), &mut v, w.view());
        iterations += 1;

        let mut restarted = false;
        // a concept whose coefficients collapsed gets one restart from the
        // worst-reconstructed row; with W[:, j] = 0 this leaves the
        // objective unchanged
        for j in 0..d {
            let collapsed = w.column(j).iter().all(|&x| x == 0.0)
                || v.column(j).iter().all(|&x| x == 0.0);
            if !collapsed {
                continue;
            }
            if reseeded[j] {
                dead[j] = true;
                continue;
            }
            reseeded[j] = true;
            restarted = true;
            let worst = worst_row(a, w.view(), v.view());
            w.column_mut(j).fill(0.0);
            v.column_mut(j).assign(&a.row(worst));
        }

        let obj = residual_norm(a, w.view(), v.view());
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(obj);
        debug_assert!(w.iter().chain(v.iter()).all(|&x| x >= 0.0));
        if restarted {
            continue;
        }
        if obj == 0.0 || (prev - obj) / prev.max(f64::MIN_POSITIVE) < config.tol {
            break;
        }
    }

    // fold column norms of V into W so each concept direction has unit length
    for (j, is_dead) in dead.iter_mut().enumerate() {
        let norm = v.column(j).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.column_mut(j).mapv_inplace(|x| x / norm);
            w.column_mut(j).mapv_inplace(|x| x * norm);
        } else {
            *is_dead = true;
            w.column_mut(j).fill(0.0);
        }
    }

    let bank = ConceptBank {
        components: v.t().to_owned(),
        provenance,
        seed: config.seed,
        dead: (0..d).filter(|&j| dead[j]).collect(),
    };
    Ok(NmfFit {
        bank,
        coefficients: w,
        objective_trace: trace,
        iterations,
    })
}

/// One HALS sweep over the columns of `x` for `target ~ x y^T` with `y` fixed.
fn hals_update(target: ArrayView2<f64>, x: &mut Array2<f64>, y: ArrayView2<f64>) {
    let ty = target.dot(&y);
    let yty = y.t().dot(&y);
    for j in 0..x.ncols() {
        let denom = yty[[j, j]];
        if denom <= 0.0 {
            continue;
        }
        let xy = x.dot(&yty.column(j));
        let col: Array1<f64> = Zip::from(x.column(j))
            .and(ty.column(j))
            .and(&xy)
            .map_collect(|&xj, &t, &p| (xj + (t - p) / denom).max(0.0));
        x.column_mut(j).assign(&col);
    }
}

fn worst_row(a: ArrayView2<f64>, w: ArrayView2<f64>, v: ArrayView2<f64>) -> usize {
    let recon = w.dot(&v.t());
    let errs = (&a - &recon).mapv(|x| x * x).sum_axis(Axis(1));
    errs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &e)| if e > best.1 { (i, e) } else { best })
        .0
}

/// Stacks banks row-wise: `[V_cer; V_unc]`.
pub fn combine_banks(cer: &ConceptBank, unc: &ConceptBank) -> Result<ConceptBank> {
    if cer.channels() != unc.channels() {
        return Err(Error::DimensionMismatch(format!(
            "banks have {} and {} channels",
            cer.channels(),
            unc.channels()
        )));
    }
    let (dc, du) = (cer.len(), unc.len());
    let mut components = Array2::zeros((dc + du, cer.channels()));
    components.slice_mut(s![..dc, ..]).assign(&cer.components);
    components.slice_mut(s![dc.., ..]).assign(&unc.components);
    let mut dead = cer.dead.clone();
    dead.extend(unc.dead.iter().map(|j| j + dc));
    Ok(ConceptBank {
        components,
        provenance: Provenance::Combined,
        seed: cer.seed,
        dead,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_is_factorized() {
        let a = Array2::eye(2);
        let fit = fit_nmf(a.view(), 2, Provenance::Uncertain, &NmfConfig::default()).unwrap();
        assert!(fit.relative_error(a.view()) < 1e-3);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = array![1.0, 2.0, 0.5, 3.0];
        let v = array![0.2, 1.0, 4.0];
        let a = Array2::from_shape_fn((4, 3), |(i, j)| u[i] * v[j]);
        let fit = fit_nmf(a.view(), 1, Provenance::Certain, &NmfConfig::default()).unwrap();
        assert!(fit.relative_error(a.view()) < 1e-3);
        let norm = fit.bank.components.row(0).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_errors() {
        let a = Array2::from_elem((3, 2), 1.0);
        assert!(matches!(
            fit_nmf(a.view(), 3, Provenance::Certain, &NmfConfig::default()),
            Err(Error::RankTooHigh { requested: 3, max: 2 })
        ));
        assert!(matches!(
            fit_nmf(Array2::<f64>::zeros((0, 4)).view(), 1, Provenance::Certain, &NmfConfig::default()),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            fit_nmf(Array2::<f64>::zeros((5, 4)).view(), 1, Provenance::Certain, &NmfConfig::default()),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn combined_bank_stacks_rows() {
        let a = Array2::from_shape_fn((6, 4), |(i, j)| ((i + 2 * j) % 5) as f64);
        let c = fit_nmf(a.view(), 2, Provenance::Certain, &NmfConfig::default()).unwrap().bank;
        let u = fit_nmf(a.view(), 3, Provenance::Uncertain, &NmfConfig { seed: 9, ..Default::default() })
            .unwrap()
            .bank;
        let both = combine_banks(&c, &u).unwrap();
        assert_eq!(both.len(), 5);
        assert_eq!(both.components.row(3), u.components.row(1));
        assert_eq!(both.provenance, Provenance::Combined);
    }
}
