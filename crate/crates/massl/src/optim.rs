//! AdamW with decoupled weight decay, plus the training schedules
//! (cosine interpolation, linear warmup, constant).
//!
//! Weight decay touches weights only, never biases, and is applied before
//! the Adam update. The optimizer owns no model references; the trainer is
//! the single writer per step.

use thiserror::Error;

use crate::model::{ModelParams, ParamGrads};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter and gradient trees have different shapes")]
    ShapeMismatch,
    #[error("non-finite gradient encountered")]
    NonFiniteGrad,
    #[error("step {t} outside schedule range 0..={total}")]
    OutOfRangeStep { t: u64, total: u64 },
}

/// Adam moments shaped like the parameters, plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ParamGrads,
    pub v: ParamGrads,
}

impl AdamWState {
    /// Fresh zero-moment state for the given parameter tree.
    /// Defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(params: &ModelParams) -> Self {
        AdamWState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_grads(),
            v: params.zeros_grads(),
        }
    }
}

/// One AdamW step: decoupled decay `p -= lr * wd * p` on weights, then the
/// bias-corrected Adam update on everything.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), OptimError> {
    if params.layers.len() != grads.layers.len()
        || params.layers.len() != state.m.layers.len()
        || params
            .layers
            .iter()
            .zip(&grads.layers)
            .any(|(p, g)| p.w.len() != g.w.len() || p.b.len() != g.b.len())
    {
        return Err(OptimError::ShapeMismatch);
    }
    for g in &grads.layers {
        if g.w.iter().chain(g.b.iter()).any(|x| !x.is_finite()) {
            return Err(OptimError::NonFiniteGrad);
        }
    }

    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    for (li, layer) in params.layers.iter_mut().enumerate() {
        let g = &grads.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];

        for i in 0..layer.w.len() {
            layer.w[i] -= lr * weight_decay * layer.w[i];
            m.w[i] = b1 * m.w[i] + (1.0 - b1) * g.w[i];
            v.w[i] = b2 * v.w[i] + (1.0 - b2) * g.w[i] * g.w[i];
            let mhat = m.w[i] / bc1;
            let vhat = v.w[i] / bc2;
            layer.w[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        // Biases: no decay.
        for i in 0..layer.b.len() {
            m.b[i] = b1 * m.b[i] + (1.0 - b1) * g.b[i];
            v.b[i] = b2 * v.b[i] + (1.0 - b2) * g.b[i] * g.b[i];
            let mhat = m.b[i] / bc1;
            let vhat = v.b[i] / bc2;
            layer.b[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Schedule shapes used for learning rate, weight decay, and EMA momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// Cosine interpolation from start to end over the full horizon.
    CosineDecay,
    /// Linear from start to end over `span` steps, constant afterwards.
    LinearWarmup,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub start: f64,
    pub end: f64,
    /// Only read by LinearWarmup.
    pub span: u64,
}

impl ScheduleSpec {
    pub fn cosine(start: f64, end: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::CosineDecay,
            start,
            end,
            span: 1,
        }
    }

    pub fn constant(value: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Constant,
            start: value,
            end: value,
            span: 1,
        }
    }

    pub fn linear_warmup(start: f64, end: f64, span: u64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::LinearWarmup,
            start,
            end,
            span: span.max(1),
        }
    }
}

/// Evaluate a schedule at step `t` of a horizon of `total` steps.
pub fn eval_schedule(spec: &ScheduleSpec, t: u64, total: u64) -> Result<f64, OptimError> {
    if t > total || total == 0 {
        return Err(OptimError::OutOfRangeStep { t, total });
    }
    Ok(match spec.kind {
        ScheduleKind::CosineDecay => {
            // Endpoints are exact by contract, not up to rounding.
            if t == 0 {
                spec.start
            } else if t == total {
                spec.end
            } else {
                let frac = t as f64 / total as f64;
                spec.end
                    + (spec.start - spec.end) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
        ScheduleKind::LinearWarmup => {
            let frac = (t as f64 / spec.span as f64).min(1.0);
            spec.start + (spec.end - spec.start) * frac
        }
        ScheduleKind::Constant => spec.start,
    })
}

/// Teacher temperature: linear warmup from `tau_start` to `tau_end` over
/// `warmup_epochs`, then constant.
pub fn teacher_temperature(epoch: u64, warmup_epochs: u64, tau_start: f64, tau_end: f64) -> f64 {
    let warmup = warmup_epochs.max(1);
    let frac = (epoch as f64 / warmup as f64).min(1.0);
    tau_start + (tau_end - tau_start) * frac
}
