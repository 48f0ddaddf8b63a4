//! Checkpoint serialization for bit-exact resume.
//!
//! Little-endian binary layout, version 1:
//!
//! ```text
//! magic            4 bytes  b"MSSL"
//! version          u32      1
//! config           u32 byte length + that many bytes of UTF-8 JSON
//! master_seed      u64
//! step             u64      completed optimizer steps
//! epoch            u64      next epoch index
//! student          param tree
//! teacher          param tree
//! opt_step         u64
//! beta1,beta2,eps  f64 x 3
//! opt_m            param tree
//! opt_v            param tree
//! mem_capacity     u64
//! mem_dim          u64
//! mem_cursor       u64
//! mem_next_age     u64
//! mem_generation   u64
//! mem_ages         u64 x capacity
//! mem_slots        f64 x capacity*dim   (row-major storage order)
//! ```
//!
//! A param tree is: u32 layer count, then per layer u32 in_dim, u32 out_dim,
//! f64 weights (out*in, row-major), f64 biases (out). Training state is
//! stored in full f64 precision: resume must reproduce the uninterrupted
//! trajectory exactly, and rounding through f32 would not.

use std::path::Path;

use massl::memory::Memory;
use massl::model::{DenseLayer, GradLayer, ModelParams, ParamGrads};
use massl::optim::AdamWState;

use crate::config::TrainConfig;
use crate::CliError;

pub const MAGIC: &[u8; 4] = b"MSSL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub master_seed: u64,
    pub step: u64,
    pub epoch: u64,
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub opt: AdamWState,
    pub memory: Memory,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn params(&mut self, p: &ModelParams) {
        self.u32(p.layers.len() as u32);
        for l in &p.layers {
            self.u32(l.in_dim as u32);
            self.u32(l.out_dim as u32);
            self.f64s(&l.w);
            self.f64s(&l.b);
        }
    }
    fn grads(&mut self, g: &ParamGrads, shape: &ModelParams) {
        self.u32(g.layers.len() as u32);
        for (gl, pl) in g.layers.iter().zip(&shape.layers) {
            self.u32(pl.in_dim as u32);
            self.u32(pl.out_dim as u32);
            self.f64s(&gl.w);
            self.f64s(&gl.b);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if self.pos + n > self.buf.len() {
            return Err(CliError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn u64s(&mut self, n: usize) -> Result<Vec<u64>, CliError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn params(&mut self) -> Result<ModelParams, CliError> {
        let n_layers = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = self.u32()? as usize;
            let out_dim = self.u32()? as usize;
            let w = self.f64s(in_dim * out_dim)?;
            let b = self.f64s(out_dim)?;
            layers.push(DenseLayer {
                w,
                b,
                in_dim,
                out_dim,
            });
        }
        Ok(ModelParams { layers })
    }
    fn grads(&mut self) -> Result<ParamGrads, CliError> {
        let n_layers = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = self.u32()? as usize;
            let out_dim = self.u32()? as usize;
            let w = self.f64s(in_dim * out_dim)?;
            let b = self.f64s(out_dim)?;
            layers.push(GradLayer { w, b });
        }
        Ok(ParamGrads { layers })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let config_json = serde_json::to_vec(&self.config)
            .map_err(|e| CliError::Checkpoint(format!("config serialization: {e}")))?;
        w.u32(config_json.len() as u32);
        w.buf.extend_from_slice(&config_json);
        w.u64(self.master_seed);
        w.u64(self.step);
        w.u64(self.epoch);
        w.params(&self.student);
        w.params(&self.teacher);
        w.u64(self.opt.step);
        w.f64(self.opt.beta1);
        w.f64(self.opt.beta2);
        w.f64(self.opt.eps);
        w.grads(&self.opt.m, &self.student);
        w.grads(&self.opt.v, &self.student);
        let mem = &self.memory;
        w.u64(mem.capacity() as u64);
        w.u64(mem.dim() as u64);
        w.u64(mem.cursor() as u64);
        w.u64(mem.next_age());
        w.u64(mem.generation());
        for &a in mem.ages() {
            w.u64(a);
        }
        w.f64s(mem.slots_flat());
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(CliError::Checkpoint("bad magic; not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Checkpoint(format!(
                "checkpoint version {version} not supported (expected {VERSION})"
            )));
        }
        let cfg_len = r.u32()? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| CliError::Checkpoint(format!("config deserialization: {e}")))?;
        let master_seed = r.u64()?;
        let step = r.u64()?;
        let epoch = r.u64()?;
        let student = r.params()?;
        let teacher = r.params()?;
        let opt_step = r.u64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let m = r.grads()?;
        let v = r.grads()?;
        let capacity = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let cursor = r.u64()? as usize;
        let next_age = r.u64()?;
        let generation = r.u64()?;
        let ages = r.u64s(capacity)?;
        let slots = r.f64s(capacity * dim)?;
        let memory = Memory::from_parts(capacity, dim, slots, ages, cursor, next_age, generation)
            .map_err(|e| CliError::Checkpoint(format!("memory: {e}")))?;
        if r.pos != bytes.len() {
            return Err(CliError::Checkpoint("trailing bytes in checkpoint".into()));
        }
        Ok(Checkpoint {
            config,
            master_seed,
            step,
            epoch,
            student,
            teacher,
            opt: AdamWState {
                step: opt_step,
                beta1,
                beta2,
                eps,
                m,
                v,
            },
            memory,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
