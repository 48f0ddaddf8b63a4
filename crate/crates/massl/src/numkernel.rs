//! Dense vector/probability primitives with analytic gradients.
//!
//! Everything here is pure, reentrant, and double precision. Softmax runs in
//! shifted log-space and cross-entropy consumes log-probabilities directly,
//! which keeps temperatures as low as 0.04 out of overflow territory.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("vector norm {norm} is too close to zero to normalize")]
    NearZeroNorm { norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("vector must be non-empty with finite entries")]
    InvalidVector,
    #[error("probabilities must lie in [0,1] and sum to 1 (sum error {0})")]
    InvalidDistribution(f64),
    #[error("vector is not unit norm (|norm - 1| = {0})")]
    NotUnitNorm(f64),
}

/// A finite real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vecf {
    data: Vec<f64>,
}

impl Vecf {
    pub fn new(data: Vec<f64>) -> Result<Self, NumError> {
        if data.is_empty() || data.iter().any(|x| !x.is_finite()) {
            return Err(NumError::InvalidVector);
        }
        Ok(Vecf { data })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// A vector on the unit hypersphere (L2 norm within 1e-6 of 1).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVec {
    data: Vec<f64>,
}

pub const UNIT_NORM_TOL: f64 = 1e-6;

impl UnitVec {
    pub fn new(data: Vec<f64>) -> Result<Self, NumError> {
        if data.is_empty() || data.iter().any(|x| !x.is_finite()) {
            return Err(NumError::InvalidVector);
        }
        let norm = l2_norm(&data);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(NumError::NotUnitNorm((norm - 1.0).abs()));
        }
        Ok(UnitVec { data })
    }

    /// Skip the norm check. For internal use where the invariant is upheld
    /// by construction (for example finite-difference probes in tests).
    pub(crate) fn new_unchecked(data: Vec<f64>) -> Self {
        UnitVec { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// A probability distribution over a memory block (entries in [0,1], sum 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Dist {
    probs: Vec<f64>,
}

impl Dist {
    pub fn new(probs: Vec<f64>) -> Result<Self, NumError> {
        if probs.is_empty() {
            return Err(NumError::InvalidVector);
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(NumError::InvalidDistribution(f64::NAN));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(NumError::InvalidDistribution(sum - 1.0));
        }
        Ok(Dist { probs })
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        Dist { probs }
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        entropy_slice(&self.probs)
    }

    /// Index of the largest probability (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// A dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mat {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn from_flat(data: Vec<f64>, rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "flat data length mismatch");
        Mat { data, rows, cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            data,
            rows: r,
            cols: c,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reshape in place, reusing the allocation. Contents are unspecified
    /// afterwards; callers overwrite every cell.
    pub fn reset(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.resize(rows * cols, 0.0);
    }

    /// Reshape in place and zero the contents.
    pub fn reset_zeroed(&mut self, rows: usize, cols: usize) {
        self.reset(rows, cols);
        self.data.fill(0.0);
    }
}

/// Dot product over eight independent accumulator lanes. The fixed-width
/// chunked form is what lets LLVM turn this into packed FMAs.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            lanes[i] += xa[i] * xb[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    let s01 = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    let s23 = (lanes[4] + lanes[5]) + (lanes[6] + lanes[7]);
    (s01 + s23) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub const NORM_EPS: f64 = 1e-12;

/// Project a vector onto the unit sphere.
pub fn l2_normalize(v: &Vecf) -> Result<UnitVec, NumError> {
    let norm = l2_norm(v.as_slice());
    if norm <= NORM_EPS {
        return Err(NumError::NearZeroNorm { norm });
    }
    let inv = 1.0 / norm;
    Ok(UnitVec::new_unchecked(
        v.as_slice().iter().map(|x| x * inv).collect(),
    ))
}

/// Cosine similarity of `z` against each row of a block of unit vectors.
/// With unit inputs this is just the dot product, so entries lie in [-1, 1].
pub fn cosine_scores(z: &UnitVec, block: &[UnitVec]) -> Result<Vecf, NumError> {
    let mut out = Vec::with_capacity(block.len());
    for row in block {
        if row.dim() != z.dim() {
            return Err(NumError::DimMismatch {
                expected: z.dim(),
                got: row.dim(),
            });
        }
        out.push(dot(z.as_slice(), row.as_slice()));
    }
    Vecf::new(out)
}

/// In-place log-softmax of `data / tau`, computed with a max shift.
/// This is the single softmax code path; everything else wraps it.
pub fn log_softmax_scaled_inplace(data: &mut [f64], tau: f64) -> Result<(), NumError> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(NumError::NonPositiveTemperature(tau));
    }
    let inv_tau = 1.0 / tau;
    let mut max = f64::NEG_INFINITY;
    for &l in data.iter() {
        let s = l * inv_tau;
        if s > max {
            max = s;
        }
    }
    let mut sum = 0.0;
    for v in data.iter_mut() {
        *v = *v * inv_tau - max;
        sum += v.exp();
    }
    let log_z = sum.ln();
    for v in data.iter_mut() {
        *v -= log_z;
    }
    Ok(())
}

/// Log-softmax of `logits / tau` into `out`.
pub fn log_softmax_scaled_into(logits: &[f64], tau: f64, out: &mut [f64]) -> Result<(), NumError> {
    debug_assert_eq!(logits.len(), out.len());
    out.copy_from_slice(logits);
    log_softmax_scaled_inplace(out, tau)
}

/// Temperature-scaled softmax: `probs[k] ∝ exp(logits[k] / tau)`.
pub fn tempered_softmax(logits: &Vecf, tau: f64) -> Result<Dist, NumError> {
    let mut log_p = vec![0.0; logits.dim()];
    log_softmax_scaled_into(logits.as_slice(), tau, &mut log_p)?;
    Ok(Dist::new_unchecked(log_p.iter().map(|l| l.exp()).collect()))
}

/// Temperature-scaled log-softmax, for feeding `cross_entropy` directly.
pub fn tempered_log_softmax(logits: &Vecf, tau: f64) -> Result<Vecf, NumError> {
    let mut log_p = vec![0.0; logits.dim()];
    log_softmax_scaled_into(logits.as_slice(), tau, &mut log_p)?;
    Vecf::new(log_p)
}

/// Cross-entropy H(target, pred) = -Σ target[k] · pred_log[k], with
/// `pred_log` already in log-space.
pub fn cross_entropy(target: &Dist, pred_log: &Vecf) -> Result<f64, NumError> {
    if target.dim() != pred_log.dim() {
        return Err(NumError::DimMismatch {
            expected: target.dim(),
            got: pred_log.dim(),
        });
    }
    Ok(-dot(target.as_slice(), pred_log.as_slice()))
}

/// Shannon entropy of a probability slice, in nats. 0·ln 0 is taken as 0.
pub fn entropy_slice(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Gradient of H(target, log_softmax(logits / tau)) with respect to the
/// logits: (softmax(logits / tau) - target) / tau.
pub fn ce_softmax_grad(logits: &Vecf, target: &Dist, tau: f64) -> Result<Vecf, NumError> {
    if logits.dim() != target.dim() {
        return Err(NumError::DimMismatch {
            expected: logits.dim(),
            got: target.dim(),
        });
    }
    let p = tempered_softmax(logits, tau)?;
    let inv_tau = 1.0 / tau;
    Vecf::new(
        p.as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(pi, qi)| (pi - qi) * inv_tau)
            .collect(),
    )
}
