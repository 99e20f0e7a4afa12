//! On-disk formats: NPY tensors plus a JSON manifest per dataset.

mod dataset;
mod manifest;
pub mod npy;

pub use dataset::{load_dataset, write_dataset, Dataset, SegmentSet, MANIFEST_FILE};
pub use manifest::{
    ItemRecord, Manifest, MANIFEST_VERSION, REQUIRED_ROLES, ROLE_ACTIVATIONS, ROLE_HEAD_BIAS,
    ROLE_HEAD_WEIGHTS, ROLE_PREDICTIONS,
};
pub use npy::{read_tensor, write_tensor, Dtype, TensorData, TensorFile};
