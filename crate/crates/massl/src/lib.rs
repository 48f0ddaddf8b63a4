//! Memory-augmented self-supervised learning on vector data.
//!
//! A student encoder is trained, without labels or anti-collapse
//! regularizers, to agree with an EMA teacher about how each augmented view
//! of a sample relates to a fixed-capacity FIFO memory of past teacher
//! representations. The memory is repartitioned into random blocks at every
//! step; each block poses an N_b-way consistency task whose targets are the
//! teacher's tempered similarity distributions.
//!
//! Module map:
//! - [`numkernel`]: vectors, distributions, softmax/cross-entropy kernels
//! - [`memory`]: the FIFO memory and block samplers
//! - [`objective`]: the block-consistency loss and its gradient
//! - [`model`]: MLP encoder with manual backprop and EMA distillation
//! - [`optim`]: AdamW and training schedules
//! - [`data`]: synthetic blobs, CSV loading, view augmentation
//! - [`evalkit`]: k-NN / linear probes, clustering metrics, collapse flags
//!
//! The `parallel` feature (default) runs batch-level loops on rayon; without
//! it the same code paths run sequentially with bit-identical results.

// Numeric kernels index several arrays per loop; zip chains read worse here.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod evalkit;
pub mod memory;
pub mod model;
pub mod numkernel;
pub mod objective;
pub mod optim;
pub mod par;
pub mod rng;

pub use memory::{BlockPlan, Memory, SamplingStrategy};
pub use numkernel::{Dist, Mat, UnitVec, Vecf};
pub use objective::{massl_loss, LossConfig, LossReport};
pub use rng::Rng;
