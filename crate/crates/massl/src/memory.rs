//! Fixed-capacity FIFO memory of unit vectors, plus the block samplers that
//! partition it for the loss.
//!
//! Storage is a ring buffer: the cursor always points at the oldest slot, so
//! a batched enqueue overwrites the oldest N slots in insertion order without
//! ever shifting data. Reads never mutate; the memory receives no gradients.

use thiserror::Error;

use crate::numkernel::{l2_norm, UnitVec, UNIT_NORM_TOL};
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("invalid memory shape: capacity {capacity}, dim {dim}")]
    InvalidShape { capacity: usize, dim: usize },
    #[error("batch of {batch} exceeds memory capacity {capacity}")]
    BatchTooLarge { batch: usize, capacity: usize },
    #[error("enqueued vector {index} is not unit norm (|norm - 1| = {err})")]
    NotUnitNorm { index: usize, err: f64 },
    #[error("vector dim {got} does not match memory dim {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for capacity {capacity}")]
    IndexOutOfRange { index: usize, capacity: usize },
    #[error("block size {block} does not divide capacity {capacity}")]
    IndivisibleBlockSize { block: usize, capacity: usize },
}

/// How memory blocks are carved out of the memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// A uniform random permutation of slot indices, split into consecutive
    /// chunks. This breaks the FIFO ordering bias.
    Stochastic,
    /// Contiguous slices of the storage order. Keeps the ordering bias; the
    /// unstable baseline.
    Blockwise,
}

impl SamplingStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingStrategy::Stochastic => "stochastic",
            SamplingStrategy::Blockwise => "blockwise",
        }
    }
}

impl std::str::FromStr for SamplingStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stochastic" => Ok(SamplingStrategy::Stochastic),
            "blockwise" => Ok(SamplingStrategy::Blockwise),
            other => Err(format!("unknown sampling strategy `{other}`")),
        }
    }
}

/// Fixed-capacity FIFO store of K unit vectors of dimension D.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    capacity: usize,
    dim: usize,
    /// K rows of D, row-major, in storage (not age) order.
    slots: Vec<f64>,
    /// Insertion counter per slot; larger is newer.
    ages: Vec<u64>,
    /// Storage index of the oldest slot == next write position.
    cursor: usize,
    next_age: u64,
    /// Bumped once per enqueue_batch; lets callers assert snapshot ordering.
    generation: u64,
}

impl Memory {
    /// Create a memory pre-filled with K independent normalized Gaussian
    /// vectors, so the loss is well defined from the first step.
    pub fn init(capacity: usize, dim: usize, seed: u64) -> Result<Self, MemoryError> {
        if capacity < 1 || dim < 2 {
            return Err(MemoryError::InvalidShape { capacity, dim });
        }
        let mut rng = Rng::from_seed(seed);
        let mut slots = vec![0.0; capacity * dim];
        for k in 0..capacity {
            let row = &mut slots[k * dim..(k + 1) * dim];
            loop {
                for x in row.iter_mut() {
                    *x = rng.normal();
                }
                let norm = l2_norm(row);
                if norm > 1e-6 {
                    for x in row.iter_mut() {
                        *x /= norm;
                    }
                    break;
                }
            }
        }
        Ok(Memory {
            capacity,
            dim,
            slots,
            ages: (0..capacity as u64).collect(),
            cursor: 0,
            next_age: capacity as u64,
            generation: 0,
        })
    }

    /// Rebuild a memory from persisted parts (checkpoint load).
    pub fn from_parts(
        capacity: usize,
        dim: usize,
        slots: Vec<f64>,
        ages: Vec<u64>,
        cursor: usize,
        next_age: u64,
        generation: u64,
    ) -> Result<Self, MemoryError> {
        if capacity < 1 || dim < 2 || slots.len() != capacity * dim || ages.len() != capacity {
            return Err(MemoryError::InvalidShape { capacity, dim });
        }
        if cursor >= capacity {
            return Err(MemoryError::IndexOutOfRange {
                index: cursor,
                capacity,
            });
        }
        Ok(Memory {
            capacity,
            dim,
            slots,
            ages,
            cursor,
            next_age,
            generation,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn next_age(&self) -> u64 {
        self.next_age
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn ages(&self) -> &[u64] {
        &self.ages
    }

    /// Raw slot storage, K x D row-major in storage order.
    pub fn slots_flat(&self) -> &[f64] {
        &self.slots
    }

    /// Borrow one slot's vector. Panics if out of range; use `gather` for the
    /// checked path.
    #[inline]
    pub fn slot(&self, index: usize) -> &[f64] {
        &self.slots[index * self.dim..(index + 1) * self.dim]
    }

    /// Overwrite the N oldest slots with `batch`, oldest first. The cursor
    /// advances modulo K and ages continue the insertion counter.
    pub fn enqueue_batch(&mut self, batch: &[UnitVec]) -> Result<(), MemoryError> {
        if batch.len() > self.capacity {
            return Err(MemoryError::BatchTooLarge {
                batch: batch.len(),
                capacity: self.capacity,
            });
        }
        for (i, v) in batch.iter().enumerate() {
            if v.dim() != self.dim {
                return Err(MemoryError::DimMismatch {
                    expected: self.dim,
                    got: v.dim(),
                });
            }
            let err = (l2_norm(v.as_slice()) - 1.0).abs();
            if err > UNIT_NORM_TOL {
                return Err(MemoryError::NotUnitNorm { index: i, err });
            }
        }
        for v in batch {
            let k = self.cursor;
            self.slots[k * self.dim..(k + 1) * self.dim].copy_from_slice(v.as_slice());
            self.ages[k] = self.next_age;
            self.next_age += 1;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.generation += 1;
        Ok(())
    }

    /// Copy out the rows named by `block`, in block order. Pure; the rows
    /// carry no link back to the memory.
    pub fn gather(&self, block: &[usize]) -> Result<Vec<UnitVec>, MemoryError> {
        let mut out = Vec::with_capacity(block.len());
        for &idx in block {
            if idx >= self.capacity {
                return Err(MemoryError::IndexOutOfRange {
                    index: idx,
                    capacity: self.capacity,
                });
            }
            out.push(UnitVec::new_unchecked(self.slot(idx).to_vec()));
        }
        Ok(out)
    }
}

/// A partition of the memory's slot indices into B disjoint blocks of N_b.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    indices: Vec<usize>,
    block_size: usize,
    strategy: SamplingStrategy,
}

impl BlockPlan {
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.indices.len() / self.block_size
    }

    pub fn strategy(&self) -> SamplingStrategy {
        self.strategy
    }

    pub fn block(&self, b: usize) -> &[usize] {
        &self.indices[b * self.block_size..(b + 1) * self.block_size]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.block_size)
    }

    /// All indices in block order (a permutation of 0..K).
    pub fn flat_indices(&self) -> &[usize] {
        &self.indices
    }

    /// Reorder whole blocks; the index set stays a partition.
    pub fn permute_blocks(&self, order: &[usize]) -> BlockPlan {
        assert_eq!(order.len(), self.num_blocks());
        let mut indices = Vec::with_capacity(self.indices.len());
        for &b in order {
            indices.extend_from_slice(self.block(b));
        }
        BlockPlan {
            indices,
            block_size: self.block_size,
            strategy: self.strategy,
        }
    }
}

/// Partition {0..K-1} into K/N_b blocks of N_b under the given strategy.
/// Stochastic shuffles the indices first; Blockwise takes storage order.
pub fn sample_blocks(
    capacity: usize,
    block_size: usize,
    strategy: SamplingStrategy,
    rng: &mut Rng,
) -> Result<BlockPlan, MemoryError> {
    if block_size < 2 || !capacity.is_multiple_of(block_size) {
        return Err(MemoryError::IndivisibleBlockSize {
            block: block_size,
            capacity,
        });
    }
    let mut indices: Vec<usize> = (0..capacity).collect();
    if strategy == SamplingStrategy::Stochastic {
        rng.shuffle(&mut indices);
    }
    Ok(BlockPlan {
        indices,
        block_size,
        strategy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Vecf;

    fn unit(dim: usize, axis: usize) -> UnitVec {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        UnitVec::new(v).unwrap()
    }

    fn unit_from(xs: &[f64]) -> UnitVec {
        crate::numkernel::l2_normalize(&Vecf::new(xs.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic_and_unit_norm() {
        let a = Memory::init(4, 3, 7).unwrap();
        let b = Memory::init(4, 3, 7).unwrap();
        assert_eq!(a, b);
        for k in 0..4 {
            assert!((l2_norm(a.slot(k)) - 1.0).abs() <= 1e-6);
        }
        let c = Memory::init(4, 3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_degenerate_shapes() {
        assert!(matches!(
            Memory::init(0, 3, 1),
            Err(MemoryError::InvalidShape { .. })
        ));
        assert!(matches!(
            Memory::init(4, 1, 1),
            Err(MemoryError::InvalidShape { .. })
        ));
    }

    #[test]
    fn fifo_replaces_oldest_first() {
        let mut mem = Memory::init(4, 4, 1).unwrap();
        // Preload a,b,c,d so slot 0 (axis 0) is oldest.
        let abcd: Vec<UnitVec> = (0..4).map(|i| unit(4, i)).collect();
        mem.enqueue_batch(&abcd).unwrap();
        // Enqueue e,f: the two oldest (a,b) drop out.
        let e = unit_from(&[1.0, 1.0, 0.0, 0.0]);
        let f = unit_from(&[0.0, 1.0, 1.0, 0.0]);
        mem.enqueue_batch(&[e.clone(), f.clone()]).unwrap();

        // Contents are now {c, d, e, f} with c the oldest.
        let mut got: Vec<(u64, Vec<f64>)> = (0..4)
            .map(|k| (mem.ages()[k], mem.slot(k).to_vec()))
            .collect();
        got.sort_by_key(|(age, _)| *age);
        assert_eq!(got[0].1, unit(4, 2).as_slice()); // c oldest
        assert_eq!(got[1].1, unit(4, 3).as_slice()); // d
        assert_eq!(got[2].1, e.as_slice());
        assert_eq!(got[3].1, f.as_slice());
        assert_eq!(mem.cursor(), 2); // next overwrite lands on c's slot
    }

    #[test]
    fn enqueue_full_capacity_replaces_everything() {
        let mut mem = Memory::init(4, 4, 2).unwrap();
        let batch: Vec<UnitVec> = (0..4).map(|i| unit(4, i)).collect();
        mem.enqueue_batch(&batch).unwrap();
        for (k, v) in batch.iter().enumerate() {
            assert_eq!(mem.slot(k), v.as_slice());
        }
    }

    #[test]
    fn enqueue_rejects_oversized_batch() {
        let mut mem = Memory::init(4, 4, 3).unwrap();
        let batch: Vec<UnitVec> = (0..5).map(|i| unit(4, i % 4)).collect();
        assert!(matches!(
            mem.enqueue_batch(&batch),
            Err(MemoryError::BatchTooLarge { .. })
        ));
    }

    #[test]
    fn enqueue_rejects_non_unit_vectors() {
        let mut mem = Memory::init(4, 3, 3).unwrap();
        let bad = UnitVec::new_unchecked(vec![0.5, 0.5, 0.5]);
        assert!(matches!(
            mem.enqueue_batch(&[bad]),
            Err(MemoryError::NotUnitNorm { .. })
        ));
    }

    #[test]
    fn blockwise_plan_is_contiguous() {
        let mut rng = Rng::from_seed(1);
        let plan = sample_blocks(8, 4, SamplingStrategy::Blockwise, &mut rng).unwrap();
        assert_eq!(plan.num_blocks(), 2);
        assert_eq!(plan.block(0), &[0, 1, 2, 3]);
        assert_eq!(plan.block(1), &[4, 5, 6, 7]);
    }

    #[test]
    fn stochastic_plan_is_a_partition() {
        let mut rng = Rng::from_seed(2);
        let plan = sample_blocks(8, 4, SamplingStrategy::Stochastic, &mut rng).unwrap();
        let mut all: Vec<usize> = plan.flat_indices().to_vec();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn plan_rejects_indivisible_block_size() {
        let mut rng = Rng::from_seed(3);
        assert!(matches!(
            sample_blocks(6, 4, SamplingStrategy::Stochastic, &mut rng),
            Err(MemoryError::IndivisibleBlockSize { .. })
        ));
    }

    #[test]
    fn gather_returns_slots_in_order_and_is_pure() {
        let mem = Memory::init(6, 4, 9).unwrap();
        let block: Vec<usize> = (0..6).collect();
        let rows = mem.gather(&block).unwrap();
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row.as_slice(), mem.slot(k));
        }
        let rows2 = mem.gather(&block).unwrap();
        assert_eq!(rows, rows2);
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mem = Memory::init(4, 4, 9).unwrap();
        assert!(matches!(
            mem.gather(&[4]),
            Err(MemoryError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn partition_property_randomized() {
        // 1000 random (K, N_b, seed): blocks disjoint and covering.
        let mut meta = Rng::from_seed(99);
        for trial in 0..1000 {
            let block = 2 + meta.below(16);
            let blocks = 1 + meta.below(16);
            let k = block * blocks;
            let mut rng = Rng::from_seed(trial);
            let plan = sample_blocks(k, block, SamplingStrategy::Stochastic, &mut rng).unwrap();
            let mut seen = vec![false; k];
            for b in plan.blocks() {
                assert_eq!(b.len(), block);
                for &i in b {
                    assert!(!seen[i], "index {i} appears twice");
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn fifo_matches_list_oracle_randomized() {
        // Oracle: a plain list of (age, vector) keeping the last K insertions.
        let mut meta = Rng::from_seed(1234);
        for trial in 0..1000 {
            let k = 1 + meta.below(12);
            let dim = 2 + meta.below(6);
            let mut mem = Memory::init(k, dim, trial).unwrap();
            let mut oracle: Vec<(u64, Vec<f64>)> = (0..k)
                .map(|s| (mem.ages()[s], mem.slot(s).to_vec()))
                .collect();
            let mut age = k as u64;

            let ops = 1 + meta.below(8);
            for _ in 0..ops {
                let n = 1 + meta.below(k);
                let batch: Vec<UnitVec> = (0..n)
                    .map(|_| {
                        let v: Vec<f64> = (0..dim).map(|_| meta.normal()).collect();
                        unit_from(&v)
                    })
                    .collect();
                for v in &batch {
                    oracle.push((age, v.as_slice().to_vec()));
                    age += 1;
                }
                while oracle.len() > k {
                    oracle.remove(0);
                }
                mem.enqueue_batch(&batch).unwrap();
            }

            let mut got: Vec<(u64, Vec<f64>)> = (0..k)
                .map(|s| (mem.ages()[s], mem.slot(s).to_vec()))
                .collect();
            got.sort_by_key(|(a, _)| *a);
            oracle.sort_by_key(|(a, _)| *a);
            assert_eq!(got, oracle, "trial {trial}");
        }
    }

    #[test]
    fn stochastic_block_membership_is_uniform() {
        // Each index should land in block 0 with frequency 1/B within the
        // 3-sigma binomial band. K=16, N_b=4, B=4, 10k trials.
        let k = 16;
        let nb = 4;
        let trials = 10_000;
        let mut counts = vec![0usize; k];
        let mut rng = Rng::from_seed(42);
        for _ in 0..trials {
            let plan = sample_blocks(k, nb, SamplingStrategy::Stochastic, &mut rng).unwrap();
            for &i in plan.block(0) {
                counts[i] += 1;
            }
        }
        let p = nb as f64 / k as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        let expected = trials as f64 * p;
        for (i, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - expected).abs();
            assert!(
                dev <= 3.0 * sigma,
                "index {i}: count {c}, expected {expected} +- {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn blockwise_plan_identical_across_seeds() {
        let mut r1 = Rng::from_seed(1);
        let mut r2 = Rng::from_seed(999);
        let p1 = sample_blocks(16, 4, SamplingStrategy::Blockwise, &mut r1).unwrap();
        let p2 = sample_blocks(16, 4, SamplingStrategy::Blockwise, &mut r2).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn generation_counts_enqueues() {
        let mut mem = Memory::init(4, 4, 0).unwrap();
        assert_eq!(mem.generation(), 0);
        mem.enqueue_batch(&[unit(4, 0)]).unwrap();
        mem.enqueue_batch(&[unit(4, 1)]).unwrap();
        assert_eq!(mem.generation(), 2);
    }
}
