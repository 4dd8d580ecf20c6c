//! Query recommendation mining from search click logs.
//!
//! Candidate recommendations are extracted from a cleaned click log by three
//! relation extractors (best-rank co-click, co-topic facet expansion and
//! co-session adjacency), labelled by category-taxonomy similarity, and
//! re-ranked by a gradient-boosted regression-tree model trained on a
//! 23-feature description of each query pair.

pub mod candidates;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod log_core;
pub mod pipeline;
pub mod taxonomy;
pub mod text;

pub use error::{Error, Result};
