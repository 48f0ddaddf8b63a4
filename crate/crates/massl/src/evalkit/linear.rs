//! Linear probe: one affine layer + softmax cross-entropy, trained with
//! mini-batch SGD under cosine learning-rate decay, on frozen features.

use crate::data::batches;
use crate::numkernel::{dot, UnitVec};
use crate::optim::{eval_schedule, ScheduleSpec};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        LinearProbeConfig {
            epochs: 50,
            lr: 0.5,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Train the probe on `train` and report top-1 accuracy on `test`.
/// The encoder is frozen by construction: only the probe's affine layer
/// has parameters here.
pub fn linear_probe(
    train_feats: &[UnitVec],
    train_labels: &[usize],
    test_feats: &[UnitVec],
    test_labels: &[usize],
    cfg: &LinearProbeConfig,
) -> Result<f64, EvalError> {
    if train_feats.is_empty() || test_feats.is_empty() {
        return Err(EvalError::EmptyReferenceSet);
    }
    if train_feats.len() != train_labels.len() || test_feats.len() != test_labels.len() {
        return Err(EvalError::LengthMismatch);
    }
    let dim = train_feats[0].dim();
    let classes = train_labels.iter().copied().max().unwrap_or(0) + 1;

    let mut w = vec![0.0f64; classes * dim];
    let mut b = vec![0.0f64; classes];
    let batch_size = cfg.batch_size.min(train_feats.len());
    let steps_per_epoch = train_feats.len() / batch_size;
    let total_steps = (cfg.epochs * steps_per_epoch).max(1) as u64;
    let lr_spec = ScheduleSpec::cosine(cfg.lr, 0.0);

    let logits_of = |w: &[f64], b: &[f64], x: &UnitVec| -> Vec<f64> {
        (0..classes)
            .map(|c| b[c] + dot(&w[c * dim..(c + 1) * dim], x.as_slice()))
            .collect()
    };

    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        for batch in batches(train_feats.len(), batch_size, cfg.seed, epoch as u64) {
            let lr = eval_schedule(&lr_spec, t.min(total_steps), total_steps).unwrap();
            let inv_n = 1.0 / batch.len() as f64;
            let mut dw = vec![0.0f64; classes * dim];
            let mut db = vec![0.0f64; classes];
            for &i in &batch {
                let logits = logits_of(&w, &b, &train_feats[i]);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in 0..classes {
                    let p = exps[c] / z;
                    let g = (p - if c == train_labels[i] { 1.0 } else { 0.0 }) * inv_n;
                    db[c] += g;
                    for (dwv, xv) in dw[c * dim..(c + 1) * dim]
                        .iter_mut()
                        .zip(train_feats[i].as_slice())
                    {
                        *dwv += g * xv;
                    }
                }
            }
            for (wv, gv) in w.iter_mut().zip(&dw) {
                *wv -= lr * gv;
            }
            for (bv, gv) in b.iter_mut().zip(&db) {
                *bv -= lr * gv;
            }
            t += 1;
        }
    }

    let mut correct = 0usize;
    for (x, &label) in test_feats.iter().zip(test_labels) {
        let logits = logits_of(&w, &b, x);
        let mut best = 0;
        for c in 1..classes {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_feats.len() as f64)
}
