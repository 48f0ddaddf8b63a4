//! Frozen-feature evaluation: weighted k-NN probe, linear probe, clustering
//! metrics against ground-truth labels, and collapse diagnostics.
//!
//! Everything here is pure; probes parallelize over test points with a
//! deterministic reduction.

mod cluster;
mod diag;
mod knn;
mod linear;

pub use cluster::{
    clustering_metrics, kmeans, label_agreement_scores, ClusterScores, KmeansResult,
};
pub use diag::{collapse_diagnostics, Diagnostics, COLLAPSE_ENTROPY_RATIO, COLLAPSE_STD};
pub use knn::{knn_predict, knn_probe, KnnConfig};
pub use linear::{linear_probe, LinearProbeConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("k = {k} exceeds reference set size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("feature dimensions disagree: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("labels/features length mismatch")]
    LengthMismatch,
    #[error("clustering degenerate: a cluster came up empty in every restart")]
    DegenerateClustering,
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
}
