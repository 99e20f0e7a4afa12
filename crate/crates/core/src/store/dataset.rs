use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Ix3};

use super::manifest::{
    Manifest, ROLE_ACTIVATIONS, ROLE_HEAD_BIAS, ROLE_HEAD_WEIGHTS, ROLE_PREDICTIONS,
};
use super::npy::{read_tensor, write_tensor, TensorData, TensorFile};
use crate::error::{Error, Result};
use crate::uncertainty::{HeadParams, PredictionSamples};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Flat segment embeddings; item `i` owns rows `items[i].rows()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    matrix: Array2<f64>,
}

impl SegmentSet {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        for ((row, channel), &v) in matrix.indexed_iter() {
            if v < 0.0 || v.is_nan() {
                return Err(Error::NegativeActivations {
                    row,
                    channel,
                    value: v as f32,
                });
            }
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn channels(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Everything the pipeline consumes, validated and immutable.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub segments: SegmentSet,
    pub predictions: PredictionSamples,
    pub head: HeadParams,
}

impl Dataset {
    pub fn n_items(&self) -> usize {
        self.manifest.n_items
    }

    pub fn item_ids(&self) -> Vec<&str> {
        self.manifest.items.iter().map(|i| i.id.as_str()).collect()
    }
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::InvalidManifest(e.to_string()))?;
    manifest.validate()?;

    let file = |role: &str| dir.join(&manifest.files[role]);
    let inconsistent = |m: String| Error::InconsistentShapes(m);

    let activations = read_tensor(file(ROLE_ACTIVATIONS))?;
    let total = manifest.total_segments();
    if activations.shape != [total, manifest.channels] {
        return Err(inconsistent(format!(
            "activations have shape {:?}, manifest implies [{}, {}]",
            activations.shape, total, manifest.channels
        )));
    }
    if let TensorData::Float32(values) = &activations.data {
        if let Some(pos) = values.iter().position(|&v| v < 0.0 || v.is_nan()) {
            return Err(Error::NegativeActivations {
                row: pos / manifest.channels,
                channel: pos % manifest.channels,
                value: values[pos],
            });
        }
    }
    let segments = SegmentSet::new(activations.to_matrix()?)?;

    let predictions = read_tensor(file(ROLE_PREDICTIONS))?;
    let expected = [manifest.n_items, manifest.n_mc_samples, manifest.n_classes];
    if predictions.shape != expected {
        return Err(inconsistent(format!(
            "predictions have shape {:?}, manifest implies {:?}",
            predictions.shape, expected
        )));
    }
    let predictions: Array3<f64> = predictions
        .to_f64_array()?
        .into_dimensionality::<Ix3>()
        .map_err(|e| inconsistent(e.to_string()))?;
    let predictions = PredictionSamples::new(predictions)?;

    let weights = read_tensor(file(ROLE_HEAD_WEIGHTS))?;
    if weights.shape != [manifest.channels, manifest.n_classes] {
        return Err(inconsistent(format!(
            "head weights have shape {:?}, expected [{}, {}]",
            weights.shape, manifest.channels, manifest.n_classes
        )));
    }
    let bias = read_tensor(file(ROLE_HEAD_BIAS))?;
    if bias.shape != [manifest.n_classes] {
        return Err(inconsistent(format!(
            "head bias has shape {:?}, expected [{}]",
            bias.shape, manifest.n_classes
        )));
    }
    let head = HeadParams::new(
        weights.to_matrix()?,
        bias.to_vector()?,
        manifest.head_dropout_rate,
    )?;

    Ok(Dataset {
        manifest,
        segments,
        predictions,
        head,
    })
}

/// Writes a dataset directory. The manifest's `files` map decides file names.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &dataset.manifest;
    let file = |role: &str| dir.join(&m.files[role]);

    write_tensor(&TensorFile::from_matrix(&dataset.segments.matrix), file(ROLE_ACTIVATIONS))?;
    let preds = dataset.predictions.as_array();
    let preds = TensorFile::new(
        preds.shape().to_vec(),
        TensorData::Float32(preds.iter().map(|&v| v as f32).collect()),
    )?;
    write_tensor(&preds, file(ROLE_PREDICTIONS))?;
    write_tensor(&TensorFile::from_matrix(&dataset.head.weights), file(ROLE_HEAD_WEIGHTS))?;
    write_tensor(
        &TensorFile::from_vector(dataset.head.bias.as_slice().expect("contiguous bias")),
        file(ROLE_HEAD_BIAS),
    )?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(m).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}
