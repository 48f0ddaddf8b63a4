//! k-means clustering and the contingency-table agreement metrics
//! (NMI, AMI, ARI) against ground-truth labels.
//!
//! NMI and AMI use the arithmetic-mean normalizer; AMI's expected mutual
//! information follows the hypergeometric model, evaluated through
//! log-gamma so moderate sample sizes stay in range.

use crate::numkernel::Mat;
use crate::par;
use crate::rng::Rng;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterScores {
    pub nmi: f64,
    pub ami: f64,
    pub ari: f64,
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Runs `restarts` independent
/// inits and keeps the lowest-inertia result that has no empty cluster.
pub fn kmeans(
    points: &Mat,
    k: usize,
    max_iters: usize,
    restarts: usize,
    seed: u64,
) -> Result<KmeansResult, EvalError> {
    let n = points.rows();
    let dim = points.cols();
    if n == 0 || k == 0 || k > n {
        return Err(EvalError::DegenerateClustering);
    }
    let mut best: Option<KmeansResult> = None;

    for restart in 0..restarts {
        let mut rng = Rng::derive(seed, &[0xC1, restart as u64]);

        // k-means++ seeding.
        let mut centers = Mat::zeros(k, dim);
        let first = rng.below(n);
        centers.row_mut(0).copy_from_slice(points.row(first));
        let mut d2: Vec<f64> = (0..n)
            .map(|i| sq_dist(points.row(i), centers.row(0)))
            .collect();
        for c in 1..k {
            let total: f64 = d2.iter().sum();
            let chosen = if total <= 0.0 {
                rng.below(n)
            } else {
                let mut target = rng.uniform() * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                pick
            };
            centers.row_mut(c).copy_from_slice(points.row(chosen));
            for i in 0..n {
                let d = sq_dist(points.row(i), centers.row(c));
                if d < d2[i] {
                    d2[i] = d;
                }
            }
        }

        // Lloyd iterations until the assignment is a fixpoint.
        let mut assignments = vec![0usize; n];
        for _ in 0..max_iters {
            let new_assign: Vec<usize> = par::map_indexed(n, |i| {
                let mut best_c = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let d = sq_dist(points.row(i), centers.row(c));
                    if d < best_d {
                        best_d = d;
                        best_c = c;
                    }
                }
                best_c
            });
            let changed = new_assign != assignments;
            assignments = new_assign;
            let mut counts = vec![0usize; k];
            let mut sums = Mat::zeros(k, dim);
            for (i, &c) in assignments.iter().enumerate() {
                counts[c] += 1;
                for (s, &x) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                    *s += x;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    let inv = 1.0 / counts[c] as f64;
                    for (ctr, &s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                        *ctr = s * inv;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let mut counts = vec![0usize; k];
        for &c in &assignments {
            counts[c] += 1;
        }
        if counts.contains(&0) {
            continue; // empty cluster; try another restart
        }
        let inertia: f64 = (0..n)
            .map(|i| sq_dist(points.row(i), centers.row(assignments[i])))
            .sum();
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KmeansResult {
                assignments,
                inertia,
            });
        }
    }
    best.ok_or(EvalError::DegenerateClustering)
}

/// Contingency table between two labelings.
pub(crate) struct Contingency {
    pub n: usize,
    pub table: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
}

pub(crate) fn contingency(a: &[usize], b: &[usize]) -> Contingency {
    let rows = a.iter().copied().max().unwrap_or(0) + 1;
    let cols = b.iter().copied().max().unwrap_or(0) + 1;
    let mut table = vec![vec![0usize; cols]; rows];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    Contingency {
        n: a.len(),
        table,
        row_sums,
        col_sums,
    }
}

fn entropy_of_counts(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(ct: &Contingency) -> f64 {
    let n = ct.n as f64;
    let mut mi = 0.0;
    for (i, row) in ct.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi +=
                    (nij / n) * ((n * nij) / (ct.row_sums[i] as f64 * ct.col_sums[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Expected mutual information under the permutation (hypergeometric) model.
fn expected_mutual_information(ct: &Contingency) -> f64 {
    let n = ct.n as f64;
    let lg = |x: usize| libm::lgamma(x as f64 + 1.0);
    let mut emi = 0.0;
    for &ai in &ct.row_sums {
        for &bj in &ct.col_sums {
            if ai == 0 || bj == 0 {
                continue;
            }
            let lower = 1.max((ai + bj).saturating_sub(ct.n));
            let upper = ai.min(bj);
            for nij in lower..=upper {
                let nij_f = nij as f64;
                let log_term = lg(ai) + lg(bj) + lg(ct.n - ai) + lg(ct.n - bj)
                    - lg(ct.n)
                    - lg(nij)
                    - lg(ai - nij)
                    - lg(bj - nij)
                    - lg(ct.n + nij - ai - bj);
                let weight = (nij_f / n) * ((n * nij_f) / (ai as f64 * bj as f64)).ln();
                emi += weight * log_term.exp();
            }
        }
    }
    emi
}

fn binom2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

pub(crate) fn scores_from_contingency(ct: &Contingency) -> ClusterScores {
    let single_row = ct.row_sums.iter().filter(|&&c| c > 0).count() <= 1;
    let single_col = ct.col_sums.iter().filter(|&&c| c > 0).count() <= 1;
    if single_row && single_col {
        return ClusterScores {
            nmi: 1.0,
            ami: 1.0,
            ari: 1.0,
        };
    }

    let mi = mutual_information(ct);
    let hu = entropy_of_counts(&ct.row_sums, ct.n);
    let hv = entropy_of_counts(&ct.col_sums, ct.n);
    let normalizer = 0.5 * (hu + hv);
    let nmi = if normalizer > 0.0 {
        mi / normalizer
    } else {
        0.0
    };

    let emi = expected_mutual_information(ct);
    let mut denom = normalizer - emi;
    let eps = f64::EPSILON;
    if denom >= 0.0 {
        denom = denom.max(eps);
    } else {
        denom = denom.min(-eps);
    }
    let ami = (mi - emi) / denom;

    let sum_ij: f64 = ct
        .table
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| binom2(c))
        .sum();
    let sum_a: f64 = ct.row_sums.iter().map(|&c| binom2(c)).sum();
    let sum_b: f64 = ct.col_sums.iter().map(|&c| binom2(c)).sum();
    let total_pairs = binom2(ct.n);
    let expected = sum_a * sum_b / total_pairs;
    let max_index = 0.5 * (sum_a + sum_b);
    let ari = if (max_index - expected).abs() < 1e-12 {
        1.0
    } else {
        (sum_ij - expected) / (max_index - expected)
    };

    ClusterScores { nmi, ami, ari }
}

/// Agreement scores between two labelings of the same points.
pub fn label_agreement_scores(a: &[usize], b: &[usize]) -> Result<ClusterScores, EvalError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::LengthMismatch);
    }
    Ok(scores_from_contingency(&contingency(a, b)))
}

/// Cluster `features` into `classes` groups with k-means (k-means++ init,
/// up to 300 Lloyd iterations, best of 10 restarts) and score the result
/// against the true labels.
pub fn clustering_metrics(
    features: &Mat,
    labels: &[usize],
    classes: usize,
    kmeans_seed: u64,
) -> Result<ClusterScores, EvalError> {
    if classes < 2 {
        return Err(EvalError::TooFewClasses(classes));
    }
    if features.rows() != labels.len() {
        return Err(EvalError::LengthMismatch);
    }
    let result = kmeans(features, classes, 300, 10, kmeans_seed)?;
    let ct = contingency(labels, &result.assignments);
    Ok(scores_from_contingency(&ct))
}
