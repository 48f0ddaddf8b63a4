//! Similarity-weighted k-nearest-neighbor probe over unit-norm features.

use crate::numkernel::{dot, UnitVec};
use crate::par;

use super::EvalError;

/// k and the vote temperature. Votes are exp(similarity / temperature)
/// summed per class over the k nearest neighbors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    pub temperature: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 20,
            temperature: 0.07,
        }
    }
}

/// Predict one label: take the k highest-cosine reference points (ties broken
/// toward the lower index), weight each by exp(sim / T), sum per class, and
/// return the argmax class (ties toward the lower class index).
pub fn knn_predict(
    query: &UnitVec,
    reference: &[UnitVec],
    labels: &[usize],
    n_classes: usize,
    cfg: &KnnConfig,
) -> usize {
    let mut sims: Vec<(f64, usize)> = reference
        .iter()
        .enumerate()
        .map(|(i, r)| (dot(query.as_slice(), r.as_slice()), i))
        .collect();
    let k = cfg.k.min(sims.len());
    let desc = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1))
    };
    if k < sims.len() {
        sims.select_nth_unstable_by(k - 1, desc);
        sims.truncate(k);
    }
    // Accumulate in descending-similarity order so the summation order is
    // well defined no matter how the selection partitioned.
    sims.sort_unstable_by(desc);
    let mut scores = vec![0.0f64; n_classes];
    for &(sim, idx) in &sims {
        scores[labels[idx]] += (sim / cfg.temperature).exp();
    }
    let mut best = 0;
    for c in 1..n_classes {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    best
}

/// Top-1 accuracy of the weighted k-NN classifier on frozen features.
pub fn knn_probe(
    train_feats: &[UnitVec],
    train_labels: &[usize],
    test_feats: &[UnitVec],
    test_labels: &[usize],
    cfg: &KnnConfig,
) -> Result<f64, EvalError> {
    if train_feats.is_empty() {
        return Err(EvalError::EmptyReferenceSet);
    }
    if train_feats.len() != train_labels.len() || test_feats.len() != test_labels.len() {
        return Err(EvalError::LengthMismatch);
    }
    if cfg.k == 0 || cfg.k > train_feats.len() {
        return Err(EvalError::KTooLarge {
            k: cfg.k,
            n: train_feats.len(),
        });
    }
    let dim = train_feats[0].dim();
    for f in train_feats.iter().chain(test_feats) {
        if f.dim() != dim {
            return Err(EvalError::DimMismatch { a: dim, b: f.dim() });
        }
    }
    let n_classes = train_labels.iter().copied().max().unwrap_or(0) + 1;
    let preds = par::map_indexed(test_feats.len(), |i| {
        knn_predict(&test_feats[i], train_feats, train_labels, n_classes, cfg)
    });
    let correct = preds
        .iter()
        .zip(test_labels)
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / test_feats.len() as f64)
}
