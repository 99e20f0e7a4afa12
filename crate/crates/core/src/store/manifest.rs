use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

pub const ROLE_ACTIVATIONS: &str = "activations";
pub const ROLE_PREDICTIONS: &str = "predictions";
pub const ROLE_HEAD_WEIGHTS: &str = "head_weights";
pub const ROLE_HEAD_BIAS: &str = "head_bias";
pub const REQUIRED_ROLES: [&str; 4] = [
    ROLE_ACTIVATIONS,
    ROLE_PREDICTIONS,
    ROLE_HEAD_WEIGHTS,
    ROLE_HEAD_BIAS,
];

fn default_dropout_rate() -> f64 {
    0.2
}

/// Dataset description stored as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub n_items: usize,
    pub n_classes: usize,
    pub n_mc_samples: usize,
    pub channels: usize,
    /// Dropout rate of the exported classification head.
    #[serde(default = "default_dropout_rate")]
    pub head_dropout_rate: f64,
    /// How the extraction adapter cut items into segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_scheme: Option<String>,
    pub items: Vec<ItemRecord>,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub segment_offset: usize,
    pub segment_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_ood: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_corrupted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_attr: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnail_path: Option<String>,
}

impl ItemRecord {
    pub fn rows(&self) -> Range<usize> {
        self.segment_offset..self.segment_offset + self.segment_count
    }
}

impl Manifest {
    pub fn total_segments(&self) -> usize {
        self.items.iter().map(|i| i.segment_count).sum()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.id == id)
    }

    /// Checks every invariant that does not require reading tensor files.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidManifest(m));
        if self.version != MANIFEST_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.n_mc_samples < 1 {
            return bad("n_mc_samples must be >= 1".into());
        }
        if self.channels < 1 {
            return bad("channels must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.head_dropout_rate) {
            return bad(format!(
                "head_dropout_rate must lie in [0, 1), got {}",
                self.head_dropout_rate
            ));
        }
        if self.items.len() != self.n_items {
            return bad(format!(
                "n_items = {} but {} item records",
                self.n_items,
                self.items.len()
            ));
        }
        for role in REQUIRED_ROLES {
            if !self.files.contains_key(role) {
                return bad(format!("files is missing role '{role}'"));
            }
        }
        let mut seen = HashSet::new();
        let mut next_row = 0usize;
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return bad(format!("duplicate item id '{}'", item.id));
            }
            if item.segment_count == 0 {
                return bad(format!("item '{}' has no segments", item.id));
            }
            if item.segment_offset != next_row {
                return bad(format!(
                    "item '{}' starts at row {} but row {} was expected",
                    item.id, item.segment_offset, next_row
                ));
            }
            next_row += item.segment_count;
            if let Some((h, w)) = item.grid {
                if h * w != item.segment_count {
                    return bad(format!(
                        "item '{}' grid {}x{} does not match {} segments",
                        item.id, h, w, item.segment_count
                    ));
                }
            }
            if let Some(label) = item.true_label {
                if label >= self.n_classes {
                    return bad(format!("item '{}' label {} out of range", item.id, label));
                }
            }
            if let Some(g) = item.group_attr {
                if g > 1 {
                    return bad(format!("item '{}' group_attr must be 0 or 1", item.id));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn manifest(items: Vec<ItemRecord>) -> Manifest {
        Manifest {
            version: 1,
            n_items: items.len(),
            n_classes: 2,
            n_mc_samples: 3,
            channels: 4,
            head_dropout_rate: 0.2,
            segment_scheme: None,
            items,
            files: REQUIRED_ROLES
                .iter()
                .map(|r| (r.to_string(), format!("{r}.npy")))
                .collect(),
        }
    }

    #[test]
    fn accepts_contiguous_offsets() {
        manifest(vec![item("a", 0, 2), item("b", 2, 1)]).validate().unwrap();
    }

    #[test]
    fn rejects_gaps_and_overlaps() {
        assert!(manifest(vec![item("a", 0, 2), item("b", 3, 1)]).validate().is_err());
        assert!(manifest(vec![item("a", 0, 2), item("b", 1, 1)]).validate().is_err());
    }

    #[test]
    fn rejects_bad_grid() {
        let mut it = item("a", 0, 4);
        it.grid = Some((3, 2));
        assert!(manifest(vec![it]).validate().is_err());
    }

    #[test]
    fn rejects_single_class() {
        let mut m = manifest(vec![item("a", 0, 1)]);
        m.n_classes = 1;
        assert!(matches!(m.validate(), Err(Error::InvalidManifest(_))));
    }

    #[test]
    fn optional_fields_are_omitted_from_json() {
        let json = serde_json::to_string(&item("a", 0, 1)).unwrap();
        assert_eq!(json, r#"{"id":"a","segment_offset":0,"segment_count":1}"#);
    }
}
