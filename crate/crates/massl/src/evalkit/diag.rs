//! Collapse diagnostics: feature spread and teacher-target entropy.
//!
//! "Collapse" is operationalized as per-dim feature std below 0.01 or
//! target entropy below 10% of its uniform maximum. The thresholds are
//! calibrated so the blockwise failure mode reliably trips them at desk
//! scale while healthy runs sit far above both.

use crate::numkernel::{Dist, UnitVec};

pub const COLLAPSE_STD: f64 = 0.01;
pub const COLLAPSE_ENTROPY_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// Mean over dimensions of the per-dimension feature std.
    pub feature_std: f64,
    /// Mean teacher-target entropy in nats.
    pub mean_target_entropy: f64,
    /// mean_target_entropy / ln(block size), clamped to [0, 1].
    pub entropy_ratio: f64,
    /// Participation ratio of the feature covariance:
    /// trace(C)^2 / ||C||_F^2.
    pub effective_rank: f64,
    pub collapsed: bool,
}

impl Diagnostics {
    /// Assemble from a precomputed mean target entropy (for example the one
    /// the loss already produced) plus a feature sample.
    pub fn from_parts(mean_target_entropy: f64, block_size: usize, features: &[UnitVec]) -> Self {
        let (feature_std, effective_rank) = feature_stats(features);
        let max_entropy = (block_size.max(2) as f64).ln();
        let entropy_ratio = (mean_target_entropy / max_entropy).clamp(0.0, 1.0);
        Diagnostics {
            feature_std,
            mean_target_entropy,
            entropy_ratio,
            effective_rank,
            collapsed: feature_std < COLLAPSE_STD || entropy_ratio < COLLAPSE_ENTROPY_RATIO,
        }
    }
}

fn feature_stats(features: &[UnitVec]) -> (f64, f64) {
    if features.is_empty() {
        return (0.0, 0.0);
    }
    let n = features.len();
    let d = features[0].dim();
    let nf = n as f64;

    let mut mean = vec![0.0f64; d];
    for f in features {
        for (m, &x) in mean.iter_mut().zip(f.as_slice()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= nf;
    }

    // Covariance (population), its trace, and Frobenius norm.
    let mut cov = vec![0.0f64; d * d];
    for f in features {
        let x = f.as_slice();
        for i in 0..d {
            let xi = x[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += xi * (x[j] - mean[j]);
            }
        }
    }
    let mut trace = 0.0;
    let mut frob2 = 0.0;
    for i in 0..d {
        for j in i..d {
            let c = cov[i * d + j] / nf;
            if i == j {
                trace += c;
                frob2 += c * c;
            } else {
                frob2 += 2.0 * c * c;
            }
        }
    }
    let mean_std = {
        let mut s = 0.0;
        for i in 0..d {
            s += (cov[i * d + i] / nf).max(0.0).sqrt();
        }
        s / d as f64
    };
    // The participation ratio is scale-invariant, so gate on the trace to
    // report 0 for a numerically-zero covariance instead of rounding noise.
    let eff_rank = if trace > 1e-12 && frob2 > 0.0 {
        trace * trace / frob2
    } else {
        0.0
    };
    (mean_std, eff_rank)
}

/// Diagnostics from a sample of teacher target distributions and a sample of
/// (teacher) features.
pub fn collapse_diagnostics(teacher_dists: &[Dist], features: &[UnitVec]) -> Diagnostics {
    let mean_entropy = if teacher_dists.is_empty() {
        0.0
    } else {
        teacher_dists.iter().map(Dist::entropy).sum::<f64>() / teacher_dists.len() as f64
    };
    let block_size = teacher_dists.first().map_or(2, Dist::dim);
    Diagnostics::from_parts(mean_entropy, block_size, features)
}
