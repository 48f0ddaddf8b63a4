//! The view-memory consistency loss over random memory blocks, with its
//! analytic gradient w.r.t. the student projections.
//!
//! For every (student view, teacher view) pair the student's per-block
//! similarity distribution is pulled toward the teacher's with cross-entropy;
//! pairs where both sides are the same global view are skipped. The loss is
//! the mean over pairs, batch rows, and blocks. Teacher distributions carry
//! no gradient; memory rows carry no gradient.
//!
//! There is deliberately no other term: no centering, no sharpening
//! regularizer, no entropy penalty. Stability comes from the stochastic
//! block sampling alone.

use thiserror::Error;

use crate::memory::{BlockPlan, Memory, MemoryError};
use crate::numkernel::{
    cosine_scores, dot, log_softmax_scaled_inplace, tempered_softmax, Dist, Mat, NumError, UnitVec,
};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("no usable view pairs (every pair is coincident or a side is empty)")]
    EmptyViewSet,
    #[error("view batches disagree in batch size or dimension")]
    MismatchedBatch,
    #[error("block plan does not cover this memory")]
    PlanMismatch,
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Temperatures for the two branches. The teacher's is typically lower,
/// producing sharper targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau_s: f64,
    pub tau_t: f64,
}

/// Loss value, per-student-view projection gradients, and target statistics.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub loss: f64,
    /// One rows x dim matrix per student view: d(loss)/d(z).
    pub grads: Vec<Mat>,
    /// Mean teacher target entropy in nats, weighted exactly like the loss.
    pub mean_target_entropy: f64,
    pub pair_count: usize,
}

/// Per-block similarity distributions of one projection against the memory:
/// block b yields softmax(cos(z, M_b) / tau).
pub fn view_memory_dists(
    z: &UnitVec,
    plan: &BlockPlan,
    mem: &Memory,
    tau: f64,
) -> Result<Vec<Dist>, ObjectiveError> {
    let mut out = Vec::with_capacity(plan.num_blocks());
    for block in plan.blocks() {
        let rows = mem.gather(block)?;
        let scores = cosine_scores(z, &rows)?;
        out.push(tempered_softmax(&scores, tau)?);
    }
    Ok(out)
}

/// Reusable buffers for the loss hot path. One per training loop; the
/// convenience `massl_loss` entry point allocates a fresh one per call.
///
/// Views are stacked row-wise into single matrices so each phase of the
/// loss is one wide parallel pass.
#[derive(Debug, Default)]
pub struct LossWorkspace {
    gathered: Mat,
    student_z: Mat,
    teacher_z: Mat,
    /// log p for all student views, stacked (S*N x K), later exp'd copies.
    student_logp: Mat,
    student_p: Mat,
    /// q for all teacher views, stacked (T*N x K).
    teacher_q: Mat,
    qsum: Mat,
    row_entropy: Vec<f64>,
    grad_all: Mat,
}

impl LossWorkspace {
    pub fn new() -> Self {
        Default::default()
    }
}

/// Stack view batches row-wise into `out` ((#views * rows) x dim).
fn stack_views(
    views: &[Vec<UnitVec>],
    rows: usize,
    dim: usize,
    out: &mut Mat,
) -> Result<(), ObjectiveError> {
    out.reset(views.len() * rows, dim);
    for (v, view) in views.iter().enumerate() {
        for (r, z) in view.iter().enumerate() {
            if z.dim() != dim {
                return Err(ObjectiveError::MismatchedBatch);
            }
            out.row_mut(v * rows + r).copy_from_slice(z.as_slice());
        }
    }
    Ok(())
}

/// scores = z . gathered^T, one parallel pass over all stacked rows.
fn score_into(z: &Mat, gathered: &Mat, scores: &mut Mat) {
    let k = gathered.rows();
    let dim = z.cols();
    scores.reset(z.rows(), k);
    let z_flat = z.as_slice();
    par::for_each_row_mut(scores.as_mut_slice(), k, |r, out| {
        let zr = &z_flat[r * dim..(r + 1) * dim];
        for (kk, o) in out.iter_mut().enumerate() {
            *o = dot(zr, gathered.row(kk));
        }
    });
}

/// In-place per-block log-softmax over every row of `scores`; `probs_out`
/// receives the exponentials and `entropy_out`, when given, the per-row
/// entropy summed over blocks.
fn blockwise_log_softmax(
    scores: &mut Mat,
    block_size: usize,
    tau: f64,
    probs_out: &mut Mat,
    entropy_out: Option<&mut Vec<f64>>,
) -> Result<(), NumError> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(NumError::NonPositiveTemperature(tau));
    }
    let k = scores.cols();
    let rows = scores.rows();
    probs_out.reset(rows, k);
    match entropy_out {
        Some(entropy) => {
            entropy.resize(rows, 0.0);
            par_rows_3(
                scores.as_mut_slice(),
                probs_out.as_mut_slice(),
                entropy,
                k,
                |_, s_row, p_row, h| {
                    let mut row_h = 0.0;
                    for b in (0..k).step_by(block_size) {
                        let seg = b..b + block_size;
                        log_softmax_scaled_inplace(&mut s_row[seg.clone()], tau)
                            .expect("tau checked");
                        for (pv, &lv) in p_row[seg.clone()].iter_mut().zip(&s_row[seg]) {
                            let p = lv.exp();
                            *pv = p;
                            row_h -= p * lv;
                        }
                    }
                    *h = row_h;
                },
            );
        }
        None => {
            par_rows_2(
                scores.as_mut_slice(),
                probs_out.as_mut_slice(),
                k,
                |_, s_row, p_row| {
                    for b in (0..k).step_by(block_size) {
                        let seg = b..b + block_size;
                        log_softmax_scaled_inplace(&mut s_row[seg.clone()], tau)
                            .expect("tau checked");
                        for (pv, &lv) in p_row[seg.clone()].iter_mut().zip(&s_row[seg]) {
                            *pv = lv.exp();
                        }
                    }
                },
            );
        }
    }
    Ok(())
}

/// Zip two equally-shaped flat matrices row by row, in parallel.
fn par_rows_2<F>(a: &mut [f64], b: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        a.par_chunks_mut(cols)
            .zip(b.par_chunks_mut(cols))
            .enumerate()
            .for_each(|(r, (ar, br))| f(r, ar, br));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (r, (ar, br)) in a.chunks_mut(cols).zip(b.chunks_mut(cols)).enumerate() {
            f(r, ar, br);
        }
    }
}

/// Same, plus one scalar output per row.
fn par_rows_3<F>(a: &mut [f64], b: &mut [f64], out: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64], &mut f64) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        a.par_chunks_mut(cols)
            .zip(b.par_chunks_mut(cols))
            .zip(out.par_iter_mut())
            .enumerate()
            .for_each(|(r, ((ar, br), o))| f(r, ar, br, o));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (r, ((ar, br), o)) in a
            .chunks_mut(cols)
            .zip(b.chunks_mut(cols))
            .zip(out.iter_mut())
            .enumerate()
        {
            f(r, ar, br, o);
        }
    }
}

/// The block-partitioned consistency loss.
///
/// `student_views[i]` and `teacher_views[j]` are projections of the same
/// batch; the first `teacher_views.len()` student views are the same
/// augmented inputs as the teacher's (the global views), which is why the
/// coincident pair (i == j) is skipped.
pub fn massl_loss(
    student_views: &[Vec<UnitVec>],
    teacher_views: &[Vec<UnitVec>],
    mem: &Memory,
    plan: &BlockPlan,
    cfg: &LossConfig,
) -> Result<LossReport, ObjectiveError> {
    massl_loss_with(
        &mut LossWorkspace::new(),
        student_views,
        teacher_views,
        mem,
        plan,
        cfg,
    )
}

/// `massl_loss` against caller-owned scratch buffers, for tight loops.
pub fn massl_loss_with(
    ws: &mut LossWorkspace,
    student_views: &[Vec<UnitVec>],
    teacher_views: &[Vec<UnitVec>],
    mem: &Memory,
    plan: &BlockPlan,
    cfg: &LossConfig,
) -> Result<LossReport, ObjectiveError> {
    let n_student = student_views.len();
    let n_teacher = teacher_views.len();
    if n_student == 0 || n_teacher == 0 {
        return Err(ObjectiveError::EmptyViewSet);
    }
    let coincident = n_student.min(n_teacher);
    let pair_count = n_student * n_teacher - coincident;
    if pair_count == 0 {
        return Err(ObjectiveError::EmptyViewSet);
    }

    let dim = mem.dim();
    let nb = plan.block_size();
    let n_blocks = plan.num_blocks();
    if plan.flat_indices().len() != mem.capacity() {
        return Err(ObjectiveError::PlanMismatch);
    }
    let rows = student_views[0].len();
    if rows == 0 {
        return Err(ObjectiveError::MismatchedBatch);
    }
    for v in student_views.iter().chain(teacher_views) {
        if v.len() != rows {
            return Err(ObjectiveError::MismatchedBatch);
        }
    }

    // Gather the memory once, in plan order. Rows are snapshots: no gradient.
    let k_total = mem.capacity();
    ws.gathered.reset(k_total, dim);
    for (r, &idx) in plan.flat_indices().iter().enumerate() {
        if idx >= k_total {
            return Err(ObjectiveError::Memory(MemoryError::IndexOutOfRange {
                index: idx,
                capacity: k_total,
            }));
        }
        ws.gathered.row_mut(r).copy_from_slice(mem.slot(idx));
    }

    // Student: stacked scores -> in-place log-softmax -> probabilities.
    stack_views(student_views, rows, dim, &mut ws.student_z)?;
    score_into(&ws.student_z, &ws.gathered, &mut ws.student_logp);
    blockwise_log_softmax(&mut ws.student_logp, nb, cfg.tau_s, &mut ws.student_p, None)?;

    // Teacher: same, plus per-row entropies in the same pass.
    stack_views(teacher_views, rows, dim, &mut ws.teacher_z)?;
    score_into(&ws.teacher_z, &ws.gathered, &mut ws.teacher_q);
    // teacher_q holds scores here; after the call it holds log q, with the
    // exponentials in qsum's buffer which we then swap into teacher_q.
    {
        let mut q_exp = std::mem::take(&mut ws.qsum);
        blockwise_log_softmax(
            &mut ws.teacher_q,
            nb,
            cfg.tau_t,
            &mut q_exp,
            Some(&mut ws.row_entropy),
        )?;
        std::mem::swap(&mut ws.teacher_q, &mut q_exp);
        ws.qsum = q_exp; // now holds log q; reused as plain scratch below
    }

    // Loss: mean over pairs of mean over rows x blocks of -q . log p.
    // View i's rows live at [i*rows, (i+1)*rows).
    let band = rows * k_total;
    let cell_count = (rows * n_blocks) as f64;
    let mut loss = 0.0;
    let mut target_entropy = 0.0;
    let teacher_entropy_sum: Vec<f64> = (0..n_teacher)
        .map(|j| ws.row_entropy[j * rows..(j + 1) * rows].iter().sum())
        .collect();
    for i in 0..n_student {
        let logp = &ws.student_logp.as_slice()[i * band..(i + 1) * band];
        for j in 0..n_teacher {
            if i == j {
                continue;
            }
            let q = &ws.teacher_q.as_slice()[j * band..(j + 1) * band];
            loss += -dot(q, logp) / cell_count;
            target_entropy += teacher_entropy_sum[j] / cell_count;
        }
    }
    loss /= pair_count as f64;
    target_entropy /= pair_count as f64;

    // Gradients. For student view i the per-pair softmax/CE gradient sums to
    //   sum_{j != i} (p_i - q_j) = c_i p_i - (qsum - [i < T] q_i)
    // which chains through the scores to the gathered memory rows.
    ws.qsum.reset(rows, k_total);
    ws.qsum
        .as_mut_slice()
        .copy_from_slice(&ws.teacher_q.as_slice()[0..band]);
    for j in 1..n_teacher {
        let q = &ws.teacher_q.as_slice()[j * band..(j + 1) * band];
        for (acc, &v) in ws.qsum.as_mut_slice().iter_mut().zip(q) {
            *acc += v;
        }
    }

    let scale = 1.0 / (pair_count as f64 * cell_count * cfg.tau_s);
    ws.grad_all.reset(n_student * rows, dim);
    {
        let p_flat = ws.student_p.as_slice();
        let q_flat = ws.teacher_q.as_slice();
        let qsum_flat = ws.qsum.as_slice();
        let g_ref = &ws.gathered;
        par::for_each_row_mut(ws.grad_all.as_mut_slice(), dim, |s, out| {
            let i = s / rows;
            let r = s % rows;
            let partners = if i < n_teacher {
                n_teacher - 1
            } else {
                n_teacher
            } as f64;
            let p_row = &p_flat[s * k_total..(s + 1) * k_total];
            let q_row = &qsum_flat[r * k_total..(r + 1) * k_total];
            let mut pdiff = vec![0.0f64; k_total];
            for ((pd, &p), &q) in pdiff.iter_mut().zip(p_row).zip(q_row) {
                *pd = (partners * p - q) * scale;
            }
            if i < n_teacher {
                let qi_row = &q_flat[(i * rows + r) * k_total..(i * rows + r + 1) * k_total];
                for (pd, &q) in pdiff.iter_mut().zip(qi_row) {
                    *pd += q * scale;
                }
            }
            out.fill(0.0);
            for (k, &coeff) in pdiff.iter().enumerate() {
                let m_row = g_ref.row(k);
                for (o, &mv) in out.iter_mut().zip(m_row) {
                    *o += coeff * mv;
                }
            }
        });
    }
    let grads: Vec<Mat> = (0..n_student)
        .map(|i| {
            Mat::from_flat(
                ws.grad_all.as_slice()[i * rows * dim..(i + 1) * rows * dim].to_vec(),
                rows,
                dim,
            )
        })
        .collect();

    Ok(LossReport {
        loss,
        grads,
        mean_target_entropy: target_entropy,
        pair_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{sample_blocks, SamplingStrategy};
    use crate::numkernel::{l2_normalize, Vecf};
    use crate::rng::Rng;

    fn random_unit(dim: usize, rng: &mut Rng) -> UnitVec {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            if let Ok(u) = l2_normalize(&Vecf::new(v).unwrap()) {
                return u;
            }
        }
    }

    fn random_views(n_views: usize, rows: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<UnitVec>> {
        (0..n_views)
            .map(|_| (0..rows).map(|_| random_unit(dim, rng)).collect())
            .collect()
    }

    /// Straight-line oracle: evaluates the loss definition term by term via
    /// the per-block `view_memory_dists` route, with no shared code beyond
    /// the scalar kernels it is checking against.
    fn loss_oracle(
        student: &[Vec<UnitVec>],
        teacher: &[Vec<UnitVec>],
        mem: &Memory,
        plan: &BlockPlan,
        cfg: &LossConfig,
    ) -> f64 {
        let rows = student[0].len();
        let n_blocks = plan.num_blocks();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (i, sv) in student.iter().enumerate() {
            for (j, tv) in teacher.iter().enumerate() {
                if i == j {
                    continue;
                }
                pairs += 1;
                for r in 0..rows {
                    let ps = view_memory_dists(&sv[r], plan, mem, cfg.tau_s).unwrap();
                    let qs = view_memory_dists(&tv[r], plan, mem, cfg.tau_t).unwrap();
                    for (p, q) in ps.iter().zip(&qs) {
                        let mut ce = 0.0;
                        for (pk, qk) in p.as_slice().iter().zip(q.as_slice()) {
                            ce -= qk * pk.ln();
                        }
                        total += ce / (rows * n_blocks) as f64;
                    }
                }
            }
        }
        total / pairs as f64
    }

    #[test]
    fn dists_uniform_when_block_orthogonal_to_z() {
        // Memory slots along axes 1..=4 of a 6-d space, z along axis 0.
        let dim = 6;
        let mut mem = Memory::init(4, dim, 0).unwrap();
        let batch: Vec<UnitVec> = (1..=4)
            .map(|a| {
                let mut v = vec![0.0; dim];
                v[a] = 1.0;
                UnitVec::new(v).unwrap()
            })
            .collect();
        mem.enqueue_batch(&batch).unwrap();
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        let z = UnitVec::new(v).unwrap();
        let mut rng = Rng::from_seed(0);
        let plan = sample_blocks(4, 2, SamplingStrategy::Blockwise, &mut rng).unwrap();
        let dists = view_memory_dists(&z, &plan, &mem, 0.1).unwrap();
        for d in dists {
            for &p in d.as_slice() {
                assert!((p - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dists_concentrate_on_matching_slot_at_low_tau() {
        let dim = 4;
        let mut mem = Memory::init(4, dim, 0).unwrap();
        let batch: Vec<UnitVec> = (0..4)
            .map(|a| {
                let mut v = vec![0.0; dim];
                v[a] = 1.0;
                UnitVec::new(v).unwrap()
            })
            .collect();
        mem.enqueue_batch(&batch).unwrap();
        let z = batch[2].clone();
        let mut rng = Rng::from_seed(0);
        let plan = sample_blocks(4, 4, SamplingStrategy::Blockwise, &mut rng).unwrap();
        let dists = view_memory_dists(&z, &plan, &mem, 0.01).unwrap();
        assert_eq!(dists[0].argmax(), 2);
        assert!(dists[0].as_slice()[2] > 0.999999);
    }

    #[test]
    fn dists_match_hand_oracle_on_fixed_numbers() {
        // D=2, K=4, N_b=2: slots at angles 0, 90, 180, 270 degrees,
        // z at 45 degrees, blockwise plan. Scores block 0: (c, c) with
        // c = cos(45deg); block 1: (-c, -c). Every distribution is uniform
        // over its block. Also check a non-symmetric z.
        let dim = 2;
        let mut mem = Memory::init(4, dim, 0).unwrap();
        let units = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let batch: Vec<UnitVec> = units
            .iter()
            .map(|v| UnitVec::new(v.to_vec()).unwrap())
            .collect();
        mem.enqueue_batch(&batch).unwrap();
        let mut rng = Rng::from_seed(0);
        let plan = sample_blocks(4, 2, SamplingStrategy::Blockwise, &mut rng).unwrap();

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z = UnitVec::new(vec![s, s]).unwrap();
        let dists = view_memory_dists(&z, &plan, &mem, 0.5).unwrap();
        for d in &dists {
            assert!((d.as_slice()[0] - 0.5).abs() < 1e-12);
        }

        // z = (1,0): block 0 scores (1, 0) at tau 0.5 -> softmax(2, 0).
        let z = UnitVec::new(vec![1.0, 0.0]).unwrap();
        let dists = view_memory_dists(&z, &plan, &mem, 0.5).unwrap();
        let e2 = (2.0_f64).exp();
        let expect0 = e2 / (e2 + 1.0);
        assert!((dists[0].as_slice()[0] - expect0).abs() < 1e-12);
        // block 1 scores (-1, 0) -> softmax(-2, 0).
        let expect1 = (-2.0_f64).exp() / ((-2.0_f64).exp() + 1.0);
        assert!((dists[1].as_slice()[0] - expect1).abs() < 1e-12);
    }

    #[test]
    fn loss_equals_target_entropy_at_fixed_point() {
        // Every view carries the same vectors and the temperatures agree, so
        // each pair has p = q: CE collapses to H(q) and the gradient
        // vanishes.
        let mut rng = Rng::from_seed(5);
        let mem = Memory::init(16, 8, 1).unwrap();
        let plan = sample_blocks(16, 4, SamplingStrategy::Stochastic, &mut rng).unwrap();
        let batch: Vec<UnitVec> = (0..3).map(|_| random_unit(8, &mut rng)).collect();
        let views = vec![batch.clone(), batch];
        let cfg = LossConfig {
            tau_s: 0.2,
            tau_t: 0.2,
        };
        let report = massl_loss(&views, &views, &mem, &plan, &cfg).unwrap();
        assert_eq!(report.pair_count, 2);
        assert!(
            (report.loss - report.mean_target_entropy).abs() < 1e-12,
            "loss {} vs entropy {}",
            report.loss,
            report.mean_target_entropy
        );
        for g in &report.grads {
            for &v in g.as_slice() {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_coincident_pair_is_empty() {
        let mut rng = Rng::from_seed(6);
        let mem = Memory::init(8, 4, 1).unwrap();
        let plan = sample_blocks(8, 4, SamplingStrategy::Stochastic, &mut rng).unwrap();
        let views = random_views(1, 2, 4, &mut rng);
        let cfg = LossConfig {
            tau_s: 0.1,
            tau_t: 0.07,
        };
        assert!(matches!(
            massl_loss(&views, &views, &mem, &plan, &cfg),
            Err(ObjectiveError::EmptyViewSet)
        ));
    }

    #[test]
    fn rejects_mismatched_batches() {
        let mut rng = Rng::from_seed(7);
        let mem = Memory::init(8, 4, 1).unwrap();
        let plan = sample_blocks(8, 4, SamplingStrategy::Stochastic, &mut rng).unwrap();
        let student = random_views(2, 3, 4, &mut rng);
        let teacher = random_views(2, 2, 4, &mut rng);
        let cfg = LossConfig {
            tau_s: 0.1,
            tau_t: 0.07,
        };
        assert!(matches!(
            massl_loss(&student, &teacher, &mem, &plan, &cfg),
            Err(ObjectiveError::MismatchedBatch)
        ));
    }

    #[test]
    fn loss_matches_per_block_oracle_on_fixed_instance() {
        // 2 views, batch 2, D=2, K=4, N_b=2 with fixed numbers.
        let mut rng = Rng::from_seed(8);
        let mut mem = Memory::init(4, 2, 3).unwrap();
        let angles = [0.3_f64, 1.2, 2.5, 4.0];
        let batch: Vec<UnitVec> = angles
            .iter()
            .map(|&a| UnitVec::new(vec![a.cos(), a.sin()]).unwrap())
            .collect();
        mem.enqueue_batch(&batch).unwrap();
        let plan = sample_blocks(4, 2, SamplingStrategy::Stochastic, &mut rng).unwrap();
        let student = random_views(2, 2, 2, &mut rng);
        let teacher = random_views(2, 2, 2, &mut rng);
        let cfg = LossConfig {
            tau_s: 0.3,
            tau_t: 0.15,
        };
        let report = massl_loss(&student, &teacher, &mem, &plan, &cfg).unwrap();
        let oracle = loss_oracle(&student, &teacher, &mem, &plan, &cfg);
        assert!(
            (report.loss - oracle).abs() < 1e-12,
            "loss {} vs oracle {}",
            report.loss,
            oracle
        );
    }

    #[test]
    fn grads_match_finite_differences() {
        // 50 random instances; perturb student projections directly.
        let mut rng = Rng::from_seed(9);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for trial in 0..50 {
            let dim = 2 + rng.below(5);
            let k = [4, 8, 8, 16][rng.below(4)];
            let nb = if k == 4 { 2 } else { 4 };
            let rows = 1 + rng.below(3);
            let n_student = 2 + rng.below(2);
            let n_teacher = 2;
            let mem = Memory::init(k, dim, 100 + trial).unwrap();
            let plan = sample_blocks(k, nb, SamplingStrategy::Stochastic, &mut rng).unwrap();
            let student = random_views(n_student, rows, dim, &mut rng);
            let teacher = random_views(n_teacher, rows, dim, &mut rng);
            let cfg = LossConfig {
                tau_s: 0.1 + rng.uniform() * 0.4,
                tau_t: 0.05 + rng.uniform() * 0.2,
            };
            let report = massl_loss(&student, &teacher, &mem, &plan, &cfg).unwrap();

            for vi in 0..n_student {
                for r in 0..rows {
                    for d in 0..dim {
                        let mut plus = student.clone();
                        let mut minus = student.clone();
                        let mut pv = plus[vi][r].as_slice().to_vec();
                        let mut mv = minus[vi][r].as_slice().to_vec();
                        pv[d] += eps;
                        mv[d] -= eps;
                        plus[vi][r] = UnitVec::new_unchecked(pv);
                        minus[vi][r] = UnitVec::new_unchecked(mv);
                        let lp = massl_loss(&plus, &teacher, &mem, &plan, &cfg).unwrap().loss;
                        let lm = massl_loss(&minus, &teacher, &mem, &plan, &cfg)
                            .unwrap()
                            .loss;
                        let fd = (lp - lm) / (2.0 * eps);
                        let an = report.grads[vi].row(r)[d];
                        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
                        worst = worst.max(rel);
                    }
                }
            }
        }
        assert!(worst <= 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn loss_bounded_below_by_target_entropy() {
        let mut rng = Rng::from_seed(10);
        for trial in 0..50 {
            let dim = 3 + rng.below(4);
            let mem = Memory::init(16, dim, 200 + trial).unwrap();
            let plan = sample_blocks(16, 4, SamplingStrategy::Stochastic, &mut rng).unwrap();
            let student = random_views(3, 2, dim, &mut rng);
            let teacher = random_views(2, 2, dim, &mut rng);
            let cfg = LossConfig {
                tau_s: 0.1,
                tau_t: 0.07,
            };
            let report = massl_loss(&student, &teacher, &mem, &plan, &cfg).unwrap();
            assert!(report.loss >= report.mean_target_entropy - 1e-9);
        }
    }

    #[test]
    fn loss_invariant_under_block_permutation() {
        let mut rng = Rng::from_seed(11);
        let mem = Memory::init(16, 6, 5).unwrap();
        let plan = sample_blocks(16, 4, SamplingStrategy::Stochastic, &mut rng).unwrap();
        let student = random_views(2, 3, 6, &mut rng);
        let teacher = random_views(2, 3, 6, &mut rng);
        let cfg = LossConfig {
            tau_s: 0.15,
            tau_t: 0.08,
        };
        let base = massl_loss(&student, &teacher, &mem, &plan, &cfg).unwrap();
        let permuted = plan.permute_blocks(&[2, 0, 3, 1]);
        let perm = massl_loss(&student, &teacher, &mem, &permuted, &cfg).unwrap();
        assert!((base.loss - perm.loss).abs() <= 1e-12);
    }

    #[test]
    fn per_block_loss_is_midpoint_convex_in_logits() {
        // CE(q, log_softmax(l / tau)) is convex in l; probe 1000 midpoints.
        use crate::numkernel::{cross_entropy, tempered_log_softmax, Vecf};
        let mut rng = Rng::from_seed(12);
        for _ in 0..1000 {
            let dim = 2 + rng.below(8);
            let tau = 0.05 + rng.uniform() * 0.5;
            let raw: Vec<f64> = (0..dim).map(|_| rng.uniform() + 0.01).collect();
            let sum: f64 = raw.iter().sum();
            let q = Dist::new(raw.iter().map(|x| x / sum).collect()).unwrap();
            let l1: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let l2: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let mid: Vec<f64> = l1.iter().zip(&l2).map(|(a, b)| 0.5 * (a + b)).collect();
            let f = |l: &[f64]| {
                let lp = tempered_log_softmax(&Vecf::new(l.to_vec()).unwrap(), tau).unwrap();
                cross_entropy(&q, &lp).unwrap()
            };
            assert!(f(&mid) <= 0.5 * (f(&l1) + f(&l2)) + 1e-9);
        }
    }
}
