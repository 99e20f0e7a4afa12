//! Predictive entropy measures and the Monte-Carlo dropout head.
//!
//! All entropies are in bits. For a set of predictive samples
//! `p_1..p_N` over `K` classes:
//!
//! * total uncertainty is the entropy of the mean prediction,
//! * aleatoric uncertainty is the mean of the per-sample entropies,
//! * epistemic uncertainty is their difference (the Jensen gap).

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for probability vectors.
pub const PROBABILITY_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    #[default]
    Total,
    Aleatoric,
    Epistemic,
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(Measure::Total),
            "aleatoric" => Ok(Measure::Aleatoric),
            "epistemic" => Ok(Measure::Epistemic),
            other => Err(Error::InvalidConfig(format!("unknown measure '{other}'"))),
        }
    }
}

/// Monte-Carlo predictive samples: one `N x K` block per item.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSamples {
    data: Array3<f64>,
}

impl PredictionSamples {
    /// Wraps an `items x N x K` array after checking every row is a
    /// probability vector.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (_, n, k) = data.dim();
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        if k < 2 {
            return Err(Error::InvalidPredictions(format!("need >= 2 classes, got {k}")));
        }
        for (item, block) in data.outer_iter().enumerate() {
            validate_rows(block).map_err(|e| match e {
                Error::InvalidPredictions(m) => Error::InvalidPredictions(format!("item {item}: {m}")),
                other => other,
            })?;
        }
        Ok(Self { data })
    }

    pub fn n_items(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_samples(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_classes(&self) -> usize {
        self.data.dim().2
    }

    pub fn item(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), i)
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }
}

fn validate_rows(samples: ArrayView2<f64>) -> Result<()> {
    for row in samples.outer_iter() {
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidPredictions("entry outside [0, 1]".into()));
        }
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::InvalidPredictions(format!("row sums to {sum}")));
        }
    }
    Ok(())
}

/// Shannon entropy in bits with `0 log 0 = 0`.
pub fn entropy_bits(p: ArrayView1<f64>) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.log2())
        .sum();
    // -0.0 for one-hot inputs
    if h == 0.0 {
        0.0
    } else {
        -h
    }
}

pub fn posterior_mean(samples: ArrayView2<f64>) -> Result<Array1<f64>> {
    samples.mean_axis(Axis(0)).ok_or(Error::EmptySamples)
}

pub fn total_uncertainty(samples: ArrayView2<f64>) -> Result<f64> {
    Ok(entropy_bits(posterior_mean(samples)?.view()))
}

pub fn aleatoric_uncertainty(samples: ArrayView2<f64>) -> Result<f64> {
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let sum: f64 = samples.outer_iter().map(entropy_bits).sum();
    Ok(sum / n as f64)
}

pub fn epistemic_uncertainty(samples: ArrayView2<f64>) -> Result<f64> {
    Ok(UncertaintyScores::from_samples(samples)?.epistemic)
}

/// The three measures for one item, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScores {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

impl UncertaintyScores {
    pub fn from_samples(samples: ArrayView2<f64>) -> Result<Self> {
        let total = total_uncertainty(samples)?;
        let aleatoric = aleatoric_uncertainty(samples)?;
        Ok(Self {
            total,
            aleatoric,
            epistemic: total - aleatoric,
        })
    }

    pub fn get(&self, measure: Measure) -> f64 {
        match measure {
            Measure::Total => self.total,
            Measure::Aleatoric => self.aleatoric,
            Measure::Epistemic => self.epistemic,
        }
    }
}

/// Scores for every item of a sample set.
pub fn score_all(samples: &PredictionSamples) -> Vec<UncertaintyScores> {
    (0..samples.n_items())
        .map(|i| UncertaintyScores::from_samples(samples.item(i)).expect("validated samples are non-empty"))
        .collect()
}

/// Linear classification head `softmax(W^T x + b)` with dropout on its input.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `C x K`
    pub weights: Array2<f64>,
    /// `K`
    pub bias: Array1<f64>,
    pub dropout_rate: f64,
}

impl HeadParams {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, dropout_rate: f64) -> Result<Self> {
        if weights.ncols() != bias.len() {
            return Err(Error::InvalidHead(format!(
                "weights have {} classes but bias has {}",
                weights.ncols(),
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidHead("non-finite parameter".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidHead(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        Ok(Self {
            weights,
            bias,
            dropout_rate,
        })
    }

    pub fn channels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.weights.ncols()
    }

    /// Deterministic pass without dropout.
    pub fn forward(&self, embedding: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_embedding(embedding)?;
        let mut logits = self.weights.t().dot(&embedding);
        logits += &self.bias;
        softmax_in_place(logits.view_mut());
        Ok(logits)
    }

    fn check_embedding(&self, embedding: ArrayView1<f64>) -> Result<()> {
        if embedding.len() != self.channels() {
            return Err(Error::DimensionMismatch(format!(
                "embedding has {} channels, head expects {}",
                embedding.len(),
                self.channels()
            )));
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(mut logits: ndarray::ArrayViewMut1<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    logits.mapv_inplace(|v| v / sum);
}

/// Fixed dropout masks, one row per Monte-Carlo sample.
///
/// Kept units are scaled by `1 / (1 - rate)` so that a rate of zero gives the
/// plain head.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMaskSet {
    masks: Array2<f64>,
    pub seed: u64,
    pub rate: f64,
}

impl DropoutMaskSet {
    pub fn generate(seed: u64, n_samples: usize, channels: usize, rate: f64) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::EmptySamples);
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks = Array2::from_shape_fn((n_samples, channels), |_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        });
        Ok(Self { masks, seed, rate })
    }

    pub fn n_samples(&self) -> usize {
        self.masks.nrows()
    }

    pub fn channels(&self) -> usize {
        self.masks.ncols()
    }

    pub fn masks(&self) -> ArrayView2<'_, f64> {
        self.masks.view()
    }
}

/// One softmax row per dropout mask: `softmax(W^T (x * m) + b)`.
pub fn mc_head_forward(
    embedding: ArrayView1<f64>,
    head: &HeadParams,
    masks: &DropoutMaskSet,
) -> Result<Array2<f64>> {
    head.check_embedding(embedding)?;
    if masks.channels() != head.channels() {
        return Err(Error::DimensionMismatch(format!(
            "masks cover {} channels, head expects {}",
            masks.channels(),
            head.channels()
        )));
    }
    let dropped = &masks.masks * &embedding.insert_axis(Axis(0));
    let mut out = dropped.dot(&head.weights);
    out += &head.bias;
    for row in out.outer_iter_mut() {
        softmax_in_place(row);
    }
    Ok(out)
}
