//! Seeded synthetic datasets with planted structure.
//!
//! Channels are laid out in blocks of three: one block per class, then an
//! OOD block, a noise block, an attribute block and a nuisance block; any
//! remaining channels carry only background. Segment embeddings are built
//! from these directions, the head reads them as follows:
//!
//! * class block `k` pushes class `k`;
//! * all OOD channels share one random positive logit pattern, so how
//!   confident an OOD item looks depends on how peaked that pattern is;
//! * noise channels push every class by a random positive amount;
//! * the attribute block pushes class 0 only, which biases predictions for
//!   items with `group_attr = 1`;
//! * the nuisance block is ignored by the head.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{
    write_dataset, Dataset, ItemRecord, Manifest, SegmentSet, MANIFEST_VERSION, ROLE_ACTIVATIONS,
    ROLE_HEAD_BIAS, ROLE_HEAD_WEIGHTS, ROLE_PREDICTIONS,
};
use crate::uncertainty::{mc_head_forward, DropoutMaskSet, HeadParams, PredictionSamples};

pub const SYNTH_FILE: &str = "synth.json";
const BLOCK: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_items: usize,
    pub n_classes: usize,
    pub channels: usize,
    /// Segments per item as a `(height, width)` grid.
    pub grid: (usize, usize),
    pub ood_fraction: f64,
    /// Share of the in-distribution items that get the noise direction.
    pub corruption_fraction: f64,
    /// Probability of `group_attr = 1`.
    pub attribute_fraction: f64,
    pub nuisance_fraction: f64,
    /// Share of in-distribution items that also show a second class.
    pub ambiguous_fraction: f64,
    pub n_mc_samples: usize,
    pub dropout_rate: f64,
    pub seed: u64,

    /// `K x C`, one unit-norm center per class.
    pub centers: Option<Vec<Vec<f64>>>,
    pub ood_direction: Option<Vec<f64>>,
    pub noise_direction: Option<Vec<f64>>,
    pub attribute_direction: Option<Vec<f64>>,
    pub nuisance_direction: Option<Vec<f64>>,

    pub class_strength: (f64, f64),
    pub second_class_strength: (f64, f64),
    /// Class signal multiplier for corrupted items.
    pub corruption_attenuation: f64,
    pub noise_strength: (f64, f64),
    pub ood_strength: (f64, f64),
    /// Weak class signal mixed into OOD items.
    pub ood_class_leak: f64,
    pub attribute_strength: (f64, f64),
    pub nuisance_strength: (f64, f64),
    pub background: f64,
    /// Multiplicative per-segment jitter, `1 +- jitter`.
    pub segment_jitter: f64,

    pub class_weight: f64,
    pub ood_weight: f64,
    pub noise_weight: f64,
    /// Logit added to class 0 per unit of attribute signal.
    pub attribute_bias: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_items: 1000,
            n_classes: 5,
            channels: 32,
            grid: (2, 2),
            ood_fraction: 0.15,
            corruption_fraction: 0.10,
            attribute_fraction: 0.5,
            nuisance_fraction: 0.5,
            ambiguous_fraction: 0.25,
            n_mc_samples: 30,
            dropout_rate: 0.2,
            seed: 0,
            centers: None,
            ood_direction: None,
            noise_direction: None,
            attribute_direction: None,
            nuisance_direction: None,
            class_strength: (1.0, 2.0),
            second_class_strength: (0.4, 0.75),
            corruption_attenuation: 0.7,
            noise_strength: (1.6, 2.4),
            ood_strength: (0.9, 1.3),
            ood_class_leak: 0.3,
            attribute_strength: (0.5, 1.0),
            nuisance_strength: (0.3, 1.0),
            background: 0.05,
            segment_jitter: 0.3,
            class_weight: 3.0,
            ood_weight: 5.0,
            noise_weight: 3.5,
            attribute_bias: 0.7,
        }
    }
}

impl SynthSpec {
    /// Default mix plus a strongly biased attribute block.
    pub fn biased(seed: u64) -> Self {
        Self {
            attribute_bias: 6.0,
            seed,
            ..Self::default()
        }
    }

    /// 40% OOD with no injected noise. OOD items carry a stronger OOD
    /// activation and a more peaked logit pattern, so some of them look
    /// confident.
    pub fn rejection(seed: u64) -> Self {
        Self {
            ood_fraction: 0.4,
            corruption_fraction: 0.0,
            ood_strength: (1.5, 2.5),
            ood_weight: 4.0,
            ood_class_leak: 0.1,
            seed,
            ..Self::default()
        }
    }
}

/// Directions actually used, stored next to the dataset as ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub centers: Vec<Vec<f64>>,
    pub ood_direction: Vec<f64>,
    pub noise_direction: Vec<f64>,
    pub attribute_direction: Vec<f64>,
    pub nuisance_direction: Vec<f64>,
}

fn block_direction(c: usize, block: usize) -> Vec<f64> {
    let mut v = vec![0.0; c];
    let w = 1.0 / (BLOCK as f64).sqrt();
    for x in &mut v[block * BLOCK..(block + 1) * BLOCK] {
        *x = w;
    }
    v
}

fn check_range(name: &str, r: (f64, f64)) -> Result<()> {
    if !(r.0 >= 0.0 && r.1 >= r.0 && r.1.is_finite()) {
        return Err(Error::InvalidSpec(format!("{name} must satisfy 0 <= lo <= hi, got {r:?}")));
    }
    Ok(())
}

fn check_direction(name: &str, v: &[f64], c: usize) -> Result<()> {
    if v.len() != c {
        return Err(Error::InvalidSpec(format!("{name} has {} entries, expected {c}", v.len())));
    }
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidSpec(format!("{name} must be nonnegative")));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidSpec(format!("{name} must have unit norm, has {norm}")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn resolve(&self) -> Result<SynthTruth> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        for (name, f) in [
            ("ood_fraction", self.ood_fraction),
            ("corruption_fraction", self.corruption_fraction),
            ("attribute_fraction", self.attribute_fraction),
            ("nuisance_fraction", self.nuisance_fraction),
            ("ambiguous_fraction", self.ambiguous_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if self.n_items == 0 {
            return bad("n_items must be positive".into());
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.grid.0 * self.grid.1 == 0 {
            return bad("grid must have at least one segment".into());
        }
        if self.n_mc_samples == 0 {
            return bad("n_mc_samples must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        for (name, r) in [
            ("class_strength", self.class_strength),
            ("second_class_strength", self.second_class_strength),
            ("noise_strength", self.noise_strength),
            ("ood_strength", self.ood_strength),
            ("attribute_strength", self.attribute_strength),
            ("nuisance_strength", self.nuisance_strength),
        ] {
            check_range(name, r)?;
        }
        for (name, v) in [
            ("corruption_attenuation", self.corruption_attenuation),
            ("ood_class_leak", self.ood_class_leak),
            ("background", self.background),
            ("segment_jitter", self.segment_jitter),
            ("class_weight", self.class_weight),
            ("ood_weight", self.ood_weight),
            ("noise_weight", self.noise_weight),
            ("attribute_bias", self.attribute_bias),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if self.segment_jitter >= 1.0 {
            return bad("segment_jitter must be below 1".into());
        }

        let (k, c) = (self.n_classes, self.channels);
        let needs_layout = self.centers.is_none()
            || self.ood_direction.is_none()
            || self.noise_direction.is_none()
            || self.attribute_direction.is_none()
            || self.nuisance_direction.is_none();
        if needs_layout && c < BLOCK * (k + 4) {
            return bad(format!(
                "default layout needs at least {} channels for {k} classes, got {c}",
                BLOCK * (k + 4)
            ));
        }
        let centers = match &self.centers {
            Some(cs) => {
                if cs.len() != k {
                    return bad(format!("{} centers for {k} classes", cs.len()));
                }
                cs.clone()
            }
            None => (0..k).map(|j| block_direction(c, j)).collect(),
        };
        for (j, center) in centers.iter().enumerate() {
            check_direction(&format!("centers[{j}]"), center, c)?;
        }
        let pick = |given: &Option<Vec<f64>>, name: &str, block: usize| -> Result<Vec<f64>> {
            let v = given.clone().unwrap_or_else(|| block_direction(c, block));
            check_direction(name, &v, c)?;
            Ok(v)
        };
        Ok(SynthTruth {
            spec: self.clone(),
            ood_direction: pick(&self.ood_direction, "ood_direction", k)?,
            noise_direction: pick(&self.noise_direction, "noise_direction", k + 1)?,
            attribute_direction: pick(&self.attribute_direction, "attribute_direction", k + 2)?,
            nuisance_direction: pick(&self.nuisance_direction, "nuisance_direction", k + 3)?,
            centers,
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    r.0 + (r.1 - r.0) * rng.random::<f64>()
}

fn head_for(truth: &SynthTruth, rng: &mut ChaCha8Rng) -> Result<HeadParams> {
    let spec = &truth.spec;
    let (k, c) = (spec.n_classes, spec.channels);
    let mut w = Array2::<f64>::zeros((c, k));
    for (j, center) in truth.centers.iter().enumerate() {
        for (ch, &v) in center.iter().enumerate() {
            w[[ch, j]] += spec.class_weight * v * (BLOCK as f64).sqrt();
        }
    }
    // one logit pattern shared by all OOD channels: dropout rescales it
    // without reordering classes
    let pattern: Vec<f64> = (0..k).map(|_| spec.ood_weight * rng.random::<f64>()).collect();
    for (ch, &v) in truth.ood_direction.iter().enumerate() {
        if v > 0.0 {
            for j in 0..k {
                w[[ch, j]] += pattern[j];
            }
        }
    }
    for (ch, &v) in truth.noise_direction.iter().enumerate() {
        if v > 0.0 {
            for j in 0..k {
                w[[ch, j]] += spec.noise_weight * rng.random::<f64>();
            }
        }
    }
    for (ch, &v) in truth.attribute_direction.iter().enumerate() {
        w[[ch, 0]] += spec.attribute_bias * v;
    }
    HeadParams::new(w, Array1::zeros(k), spec.dropout_rate)
}

fn to_f32_precision(x: f64) -> f64 {
    x as f32 as f64
}

/// Builds the dataset in memory. Values are rounded to `f32` so the result
/// equals what [`crate::store::load_dataset`] reads back.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, SynthTruth)> {
    let truth = spec.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let head = head_for(&truth, &mut rng)?;
    let head = HeadParams::new(head.weights.mapv(to_f32_precision), head.bias, head.dropout_rate)?;

    let n = spec.n_items;
    let (k, c) = (spec.n_classes, spec.channels);
    let segs = spec.grid.0 * spec.grid.1;
    let n_ood = (spec.ood_fraction * n as f64).round() as usize;
    let n_in = n - n_ood;
    let n_corrupt = (spec.corruption_fraction * n_in as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut kind = vec![Kind::Clean; n];
    for &i in &order[..n_ood] {
        kind[i] = Kind::Ood;
    }
    for &i in &order[n_ood..n_ood + n_corrupt] {
        kind[i] = Kind::Corrupted;
    }

    let dir = |v: &Vec<f64>| Array1::from(v.clone());
    let centers: Vec<Array1<f64>> = truth.centers.iter().map(dir).collect();
    let ood = dir(&truth.ood_direction);
    let noise = dir(&truth.noise_direction);
    let attribute = dir(&truth.attribute_direction);
    let nuisance = dir(&truth.nuisance_direction);

    let mut activations = Array2::<f64>::zeros((n * segs, c));
    let mut predictions = Array3::<f64>::zeros((n, spec.n_mc_samples, k));
    let mut items = Vec::with_capacity(n);
    for (i, &kind) in kind.iter().enumerate() {
        let label = rng.random_range(0..k);
        let group_attr = u8::from(rng.random::<f64>() < spec.attribute_fraction);
        let has_nuisance = rng.random::<f64>() < spec.nuisance_fraction;
        let ambiguous = kind != Kind::Ood && rng.random::<f64>() < spec.ambiguous_fraction;
        let other = (label + rng.random_range(1..k)) % k;

        let mut signal = Array1::<f64>::zeros(c);
        match kind {
            Kind::Ood => {
                signal.scaled_add(uniform(&mut rng, spec.ood_strength), &ood);
                signal.scaled_add(spec.ood_class_leak * rng.random::<f64>(), &centers[label]);
            }
            Kind::Clean | Kind::Corrupted => {
                let mut s = uniform(&mut rng, spec.class_strength);
                if kind == Kind::Corrupted {
                    s *= spec.corruption_attenuation;
                    signal.scaled_add(uniform(&mut rng, spec.noise_strength), &noise);
                }
                signal.scaled_add(s, &centers[label]);
                if ambiguous {
                    signal.scaled_add(s * uniform(&mut rng, spec.second_class_strength), &centers[other]);
                }
            }
        }
        if group_attr == 1 {
            signal.scaled_add(uniform(&mut rng, spec.attribute_strength), &attribute);
        }
        if has_nuisance {
            signal.scaled_add(uniform(&mut rng, spec.nuisance_strength), &nuisance);
        }

        let mut pooled = Array1::<f64>::zeros(c);
        for s in 0..segs {
            let mut row = activations.row_mut(i * segs + s);
            for ch in 0..c {
                let jitter = 1.0 + spec.segment_jitter * (2.0 * rng.random::<f64>() - 1.0);
                let v = signal[ch] * jitter + spec.background * rng.random::<f64>();
                row[ch] = to_f32_precision(v);
            }
            pooled += &row;
        }
        pooled /= segs as f64;

        let masks = DropoutMaskSet::generate(rng.random(), spec.n_mc_samples, c, spec.dropout_rate)?;
        let probs = mc_head_forward(pooled.view(), &head, &masks)?;
        predictions.slice_mut(ndarray::s![i, .., ..]).assign(&rounded_rows(probs));

        items.push(ItemRecord {
            id: format!("item-{i:05}"),
            segment_offset: i * segs,
            segment_count: segs,
            grid: Some(spec.grid),
            true_label: (kind != Kind::Ood).then_some(label),
            is_ood: Some(kind == Kind::Ood),
            is_corrupted: Some(kind == Kind::Corrupted),
            group_attr: Some(group_attr),
            thumbnail_path: None,
        });
    }

    let files: BTreeMap<String, String> = [
        (ROLE_ACTIVATIONS, "activations.npy"),
        (ROLE_PREDICTIONS, "predictions.npy"),
        (ROLE_HEAD_WEIGHTS, "head_weights.npy"),
        (ROLE_HEAD_BIAS, "head_bias.npy"),
    ]
    .into_iter()
    .map(|(r, f)| (r.to_string(), f.to_string()))
    .collect();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        n_items: n,
        n_classes: k,
        n_mc_samples: spec.n_mc_samples,
        channels: c,
        head_dropout_rate: spec.dropout_rate,
        segment_scheme: Some("synthetic-grid".into()),
        items,
        files,
    };
    manifest.validate()?;
    let dataset = Dataset {
        manifest,
        segments: SegmentSet::new(activations)?,
        predictions: PredictionSamples::new(predictions)?,
        head,
    };
    Ok((dataset, truth))
}

/// Rounds probabilities to `f32` and renormalizes in `f32` arithmetic so the
/// stored rows still sum to one.
fn rounded_rows(mut probs: Array2<f64>) -> Array2<f64> {
    for mut row in probs.outer_iter_mut() {
        let sum: f32 = row.iter().map(|&p| p as f32).sum();
        row.mapv_inplace(|p| ((p as f32) / sum) as f64);
    }
    probs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Clean,
    Corrupted,
    Ood,
}

/// Generates and writes a dataset directory plus `synth.json`.
pub fn write_synth(dir: impl AsRef<Path>, spec: &SynthSpec) -> Result<(Dataset, SynthTruth)> {
    let dir = dir.as_ref();
    let (dataset, truth) = generate(spec)?;
    write_dataset(dir, &dataset)?;
    let path = dir.join(SYNTH_FILE);
    let json = serde_json::to_string_pretty(&truth).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok((dataset, truth))
}

pub fn read_truth(dir: impl AsRef<Path>) -> Result<SynthTruth> {
    let path = dir.as_ref().join(SYNTH_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Cosine similarity between two nonnegative directions.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_items: 60,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn clean_spec_sets_no_flags() {
        let spec = SynthSpec {
            ood_fraction: 0.0,
            corruption_fraction: 0.0,
            ..small(1)
        };
        let (d, _) = generate(&spec).unwrap();
        assert!(d.manifest.items.iter().all(|i| i.is_ood == Some(false) && i.is_corrupted == Some(false)));
    }

    #[test]
    fn full_corruption_flags_everything() {
        let spec = SynthSpec {
            ood_fraction: 0.0,
            corruption_fraction: 1.0,
            ..small(2)
        };
        let (d, _) = generate(&spec).unwrap();
        assert!(d.manifest.items.iter().all(|i| i.is_corrupted == Some(true)));
    }

    #[test]
    fn counts_follow_fractions() {
        let (d, _) = generate(&SynthSpec { n_items: 200, ..small(3) }).unwrap();
        let ood = d.manifest.items.iter().filter(|i| i.is_ood == Some(true)).count();
        let bad = d.manifest.items.iter().filter(|i| i.is_corrupted == Some(true)).count();
        assert_eq!(ood, 30);
        assert_eq!(bad, 17);
        assert!(d.manifest.items.iter().all(|i| i.true_label.is_some() != (i.is_ood == Some(true))));
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SynthSpec { ood_fraction: 1.5, ..small(0) },
            SynthSpec { channels: 10, ..small(0) },
            SynthSpec { class_strength: (2.0, 1.0), ..small(0) },
            SynthSpec { noise_direction: Some(vec![0.5; 32]), ..small(0) },
            SynthSpec { dropout_rate: 1.0, ..small(0) },
        ] {
            assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let (a, _) = generate(&small(9)).unwrap();
        let (b, _) = generate(&small(9)).unwrap();
        assert_eq!(a.segments.matrix(), b.segments.matrix());
        assert_eq!(a.predictions.as_array(), b.predictions.as_array());
        let (c, _) = generate(&small(10)).unwrap();
        assert_ne!(a.segments.matrix(), c.segments.matrix());
    }

    #[test]
    fn spec_json_defaults_and_unknown_fields() {
        let spec: SynthSpec = serde_json::from_str(r#"{"n_items": 12, "seed": 4}"#).unwrap();
        assert_eq!(spec.n_items, 12);
        assert_eq!(spec.n_classes, 5);
        assert!(serde_json::from_str::<SynthSpec>(r#"{"n_itemz": 12}"#).is_err());
    }
}
