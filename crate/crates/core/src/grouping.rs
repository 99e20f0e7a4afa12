//! Two-component 1-D Gaussian mixture over uncertainty scores.
//!
//! The component with the larger mean is the uncertain (UNC) one; its
//! posterior responsibility is the group classifier `f`, and items with
//! `f >= 0.5` belong to UNC.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-8;
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "CER")]
    Certain,
    #[serde(rename = "UNC")]
    Uncertain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    fn log_weighted_density(&self, u: f64) -> f64 {
        let d = u - self.mean;
        self.weight.ln() - 0.5 * (2.0 * PI * self.variance).ln() - d * d / (2.0 * self.variance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    pub certain: Component,
    pub uncertain: Component,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood after initialization and after every EM step.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl Gmm2 {
    /// Builds a mixture from two components in any order; the larger mean
    /// (or, on a tie, the larger variance) becomes the uncertain component.
    pub fn from_components(a: Component, b: Component) -> Self {
        let (certain, uncertain) = order_components(a, b);
        Self {
            certain,
            uncertain,
            iterations: 0,
            log_likelihood: f64::NAN,
            trace: Vec::new(),
        }
    }

    pub fn log_likelihood_of(&self, scores: &[f64]) -> f64 {
        scores
            .iter()
            .map(|&u| {
                log_add(
                    self.certain.log_weighted_density(u),
                    self.uncertain.log_weighted_density(u),
                )
            })
            .sum()
    }
}

fn order_components(a: Component, b: Component) -> (Component, Component) {
    let b_is_unc = if (a.mean - b.mean).abs() <= TIE_EPS {
        b.variance > a.variance
    } else {
        b.mean > a.mean
    };
    if b_is_unc {
        (a, b)
    } else {
        (b, a)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(VARIANCE_FLOOR))
}

/// Fits the mixture by EM, starting from a split of the sorted scores at
/// the median.
pub fn fit_gmm_em(scores: &[f64], max_iter: usize, tol: f64) -> Result<Gmm2> {
    if scores.len() < 4 {
        return Err(Error::NotEnoughData(format!(
            "need at least 4 scores, got {}",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|u| !u.is_finite()) {
        return Err(Error::NotEnoughData(format!("non-finite score {bad}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[sorted.len() - 1] - sorted[0] <= TIE_EPS {
        return Err(Error::DegenerateData);
    }

    let half = sorted.len() / 2;
    let (m0, v0) = moments(&sorted[..half]);
    let (m1, v1) = moments(&sorted[half..]);
    let mut comps = [
        Component {
            weight: 0.5,
            mean: m0,
            variance: v0,
        },
        Component {
            weight: 0.5,
            mean: m1,
            variance: v1,
        },
    ];

    let n = scores.len() as f64;
    let mut resp = vec![0.0; scores.len()];
    let mut ll = e_step(&comps, scores, &mut resp);
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < max_iter {
        // M step; resp holds the responsibility of component 1
        let r1: f64 = resp.iter().sum();
        let r0 = n - r1;
        let mut next = comps;
        for (k, rk) in [(0usize, r0), (1, r1)] {
            // a component that lost every point keeps its previous shape
            if rk <= f64::MIN_POSITIVE {
                continue;
            }
            let w = |i: usize| if k == 1 { resp[i] } else { 1.0 - resp[i] };
            let mean = scores.iter().enumerate().map(|(i, u)| w(i) * u).sum::<f64>() / rk;
            let var = scores
                .iter()
                .enumerate()
                .map(|(i, u)| w(i) * (u - mean).powi(2))
                .sum::<f64>()
                / rk;
            next[k] = Component {
                weight: (rk / n).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
                mean,
                variance: var.max(VARIANCE_FLOOR),
            };
        }
        comps = next;
        let new_ll = e_step(&comps, scores, &mut resp);
        iterations += 1;
        trace.push(new_ll);
        let delta = new_ll - ll;
        ll = new_ll;
        if delta.abs() < tol {
            break;
        }
    }

    let mut gmm = Gmm2::from_components(comps[0], comps[1]);
    gmm.iterations = iterations;
    gmm.log_likelihood = ll;
    gmm.trace = trace;
    Ok(gmm)
}

/// Fills `resp` with the responsibility of component 1; returns the
/// log-likelihood.
fn e_step(comps: &[Component; 2], scores: &[f64], resp: &mut [f64]) -> f64 {
    let mut ll = 0.0;
    for (r, &u) in resp.iter_mut().zip(scores) {
        let l0 = comps[0].log_weighted_density(u);
        let l1 = comps[1].log_weighted_density(u);
        let total = log_add(l0, l1);
        *r = (l1 - total).exp();
        ll += total;
    }
    ll
}

/// Posterior probability that `u` came from the uncertain component.
pub fn unc_posterior(gmm: &Gmm2, u: f64) -> f64 {
    let lc = gmm.certain.log_weighted_density(u);
    let lu = gmm.uncertain.log_weighted_density(u);
    // logistic of the log-odds, evaluated on the stable side
    let z = lu - lc;
    if z.is_nan() {
        // both densities underflowed at an extreme score: the wider
        // component dominates, or with equal widths the one on that side
        let (c, n) = (&gmm.certain, &gmm.uncertain);
        let unc_wins = if n.variance != c.variance {
            n.variance > c.variance
        } else {
            (n.mean - c.mean) * u > 0.0
        };
        return if unc_wins { 1.0 } else { 0.0 };
    }
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub f_value: f64,
    pub group: Group,
}

pub fn assign_groups(gmm: &Gmm2, scores: &[f64]) -> Vec<GroupAssignment> {
    scores
        .iter()
        .map(|&u| {
            let f_value = unc_posterior(gmm, u);
            GroupAssignment {
                f_value,
                group: if f_value >= 0.5 {
                    Group::Uncertain
                } else {
                    Group::Certain
                },
            }
        })
        .collect()
}

pub fn group_sizes(assignments: &[GroupAssignment]) -> (usize, usize) {
    let unc = assignments
        .iter()
        .filter(|a| a.group == Group::Uncertain)
        .count();
    (assignments.len() - unc, unc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn mixture_draws(seed: u64, n: usize, sd: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = Normal::new(0.5, sd).unwrap();
        let hi = Normal::new(3.0, sd).unwrap();
        (0..n)
            .map(|_| {
                if rng.random::<bool>() {
                    lo.sample(&mut rng)
                } else {
                    hi.sample(&mut rng)
                }
            })
            .collect()
    }

    #[test]
    fn recovers_separated_mixture() {
        let scores = mixture_draws(1, 1000, 0.3);
        let g = fit_gmm_em(&scores, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(g.certain.mean, 0.5, epsilon = 0.1);
        assert_abs_diff_eq!(g.uncertain.mean, 3.0, epsilon = 0.1);
    }

    #[test]
    fn identical_scores_are_degenerate() {
        assert!(matches!(
            fit_gmm_em(&[0.7; 10], 100, 1e-8),
            Err(Error::DegenerateData)
        ));
        assert!(matches!(
            fit_gmm_em(&[0.1, 0.2, 0.3], 100, 1e-8),
            Err(Error::NotEnoughData(_))
        ));
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n = rng.random_range(4..300);
            let spread = rng.random_range(0.05..2.0);
            let scores: Vec<f64> = (0..n)
                .map(|_| rng.random::<f64>().powi(2) * spread + if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 })
                .collect();
            let g = fit_gmm_em(&scores, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
            for w in g.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
            }
            assert_abs_diff_eq!(g.log_likelihood_of(&scores), g.log_likelihood, epsilon = 1e-6 * g.log_likelihood.abs().max(1.0));
        }
    }

    fn symmetric() -> Gmm2 {
        Gmm2::from_components(
            Component { weight: 0.5, mean: 0.0, variance: 1.0 },
            Component { weight: 0.5, mean: 4.0, variance: 1.0 },
        )
    }

    #[test]
    fn posterior_midpoint_and_limits() {
        let g = symmetric();
        assert_abs_diff_eq!(unc_posterior(&g, 2.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(unc_posterior(&g, 4.0 + 50.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(unc_posterior(&g, -50.0), 0.0, epsilon = 1e-12);
        assert_eq!(unc_posterior(&g, 1e300), 1.0);
        assert_eq!(unc_posterior(&g, -1e300), 0.0);
    }

    #[test]
    fn posterior_at_unc_mean_matches_direct_densities() {
        let g = Gmm2::from_components(
            Component { weight: 0.3, mean: 0.5, variance: 0.04 },
            Component { weight: 0.7, mean: 2.5, variance: 0.25 },
        );
        let pdf = |c: &Component, u: f64| {
            c.weight * (-(u - c.mean).powi(2) / (2.0 * c.variance)).exp() / (2.0 * PI * c.variance).sqrt()
        };
        let u = 2.5;
        let direct = pdf(&g.uncertain, u) / (pdf(&g.uncertain, u) + pdf(&g.certain, u));
        assert_abs_diff_eq!(unc_posterior(&g, u), direct, epsilon = 1e-14);
        assert!(direct > 0.5);
    }

    #[test]
    fn relabeling_is_order_independent() {
        let a = Component { weight: 0.4, mean: 2.0, variance: 0.5 };
        let b = Component { weight: 0.6, mean: 0.1, variance: 0.2 };
        let (ab, ba) = (Gmm2::from_components(a, b), Gmm2::from_components(b, a));
        assert_eq!((ab.certain, ab.uncertain), (ba.certain, ba.uncertain));
        assert_eq!(ab.uncertain, a);
        // tie on means: larger variance wins
        let c = Component { weight: 0.5, mean: 1.0, variance: 0.1 };
        let d = Component { weight: 0.5, mean: 1.0, variance: 0.9 };
        assert_eq!(Gmm2::from_components(c, d).uncertain, d);
        assert_eq!(Gmm2::from_components(d, c).uncertain, d);
    }

    #[test]
    fn assignment_threshold_and_monotonicity() {
        let g = symmetric();
        assert!(assign_groups(&g, &[]).is_empty());
        let grid: Vec<f64> = (0..200).map(|i| -2.0 + i as f64 * 0.04).collect();
        let a = assign_groups(&g, &grid);
        for w in a.windows(2) {
            assert!(w[1].f_value >= w[0].f_value);
        }
        // one switch from CER to UNC
        let switches = a.windows(2).filter(|w| w[0].group != w[1].group).count();
        assert_eq!(switches, 1);
        for x in &a {
            assert_eq!(x.group == Group::Uncertain, x.f_value >= 0.5);
        }
        let at_means = assign_groups(&g, &[0.0, 4.0]);
        assert_eq!(at_means[0].group, Group::Certain);
        assert_eq!(at_means[1].group, Group::Uncertain);
    }

    #[test]
    fn affine_rescaling_preserves_assignment() {
        for seed in 0..5 {
            let scores = mixture_draws(seed, 500, 0.3);
            let scaled: Vec<f64> = scores.iter().map(|u| 3.0 * u + 7.0).collect();
            let a = assign_groups(&fit_gmm_em(&scores, 500, 1e-8).unwrap(), &scores);
            let b = assign_groups(&fit_gmm_em(&scaled, 500, 1e-8).unwrap(), &scaled);
            let same = a.iter().zip(&b).filter(|(x, y)| x.group == y.group).count();
            assert!(same as f64 >= 0.99 * scores.len() as f64);
        }
    }
}
