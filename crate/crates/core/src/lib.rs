//! Concept-based explanations of a classifier's predictive uncertainty.
//!
//! The pipeline scores Monte-Carlo predictions with entropy measures, splits
//! items into certain and uncertain groups with a two-component Gaussian
//! mixture, learns one NMF concept bank per group over segment embeddings,
//! and ranks concepts by total Sobol indices of the uncertainty response.
//! [`strategies`] turns those explanations into data filtering, rejection
//! and concept-ablation procedures.

// `!(x >= 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concepts;
pub mod error;
pub mod flags;
pub mod grouping;
pub mod importance;
pub mod pipeline;
pub mod store;
pub mod strategies;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
