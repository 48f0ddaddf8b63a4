//! Run configuration: defaults, the key=value config-file format, and
//! validation.
//!
//! Config files are plain `key = value` lines with `#` comments. Unknown
//! keys are rejected; missing keys fall back to the desk-scale defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use massl::memory::SamplingStrategy;

use crate::CliError;

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        noise: f64,
    },
    Csv {
        path: PathBuf,
    },
}

/// Which teacher projections feed the memory each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnqueuePolicy {
    /// Only the first global view's teacher output (the reference behavior).
    OneGlobal,
    /// Both global views' teacher outputs, concatenated in view order.
    BothGlobals,
}

impl EnqueuePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnqueuePolicy::OneGlobal => "one-global",
            EnqueuePolicy::BothGlobals => "both-globals",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,

    // Encoder.
    pub backbone_widths: Vec<usize>,
    pub head_hidden: usize,
    pub embed_dim: usize,

    // Memory and loss.
    pub memory_size: usize,
    pub block_size: usize,
    pub sampling: String, // "stochastic" | "blockwise"
    pub tau_s: f64,
    pub tau_t_start: f64,
    pub tau_t_end: f64,
    pub tau_t_warmup_epochs: u64,
    pub enqueue_policy: EnqueuePolicy,

    // Views.
    pub global_views: usize,
    pub local_views: usize,
    pub global_noise: f64,
    pub global_dropout: f64,
    pub global_scale_jitter: f64,
    pub local_noise: f64,
    pub local_dropout: f64,
    pub local_scale_jitter: f64,

    // Optimization.
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay_start: f64,
    pub weight_decay_end: f64,
    pub ema_start: f64,
    pub ema_end: f64,

    // Loop.
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub log_interval: u64,
    pub checkpoint_interval_epochs: u64,
    /// Stop a run once this many consecutive steps have tripped the
    /// collapse flag (checked at epoch boundaries); 0 disables.
    pub collapse_patience_steps: u64,
    pub out_dir: PathBuf,

    // Held-out evaluation rows generated per class (blobs only).
    pub eval_per_class: usize,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: trains in minutes on a laptop CPU while keeping
    /// the sampling-strategy contrast visible.
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetSpec::Blobs {
                classes: 10,
                per_class: 500,
                dim: 32,
                separation: 5.0,
                noise: 1.0,
            },
            backbone_widths: vec![128, 128],
            head_hidden: 128,
            embed_dim: 32,
            memory_size: 1024,
            block_size: 256,
            sampling: "stochastic".into(),
            tau_s: 0.1,
            // Constant sharp teacher targets at desk scale; the full-scale
            // preset warms 0.04 -> 0.07 instead.
            tau_t_start: 0.04,
            tau_t_end: 0.04,
            tau_t_warmup_epochs: 30,
            enqueue_policy: EnqueuePolicy::OneGlobal,
            global_views: 2,
            local_views: 4,
            global_noise: 0.5,
            global_dropout: 0.0,
            global_scale_jitter: 0.1,
            local_noise: 1.0,
            local_dropout: 0.3,
            local_scale_jitter: 0.2,
            lr_start: 1e-3,
            lr_end: 1e-5,
            weight_decay_start: 0.04,
            weight_decay_end: 0.4,
            // Faster teacher than the full-scale 0.996: the memory must span
            // enough encoder drift for sampling strategies to differ.
            ema_start: 0.9,
            ema_end: 1.0,
            epochs: 200,
            // 32 keeps the memory 32 optimizer steps deep (K / batch); an
            // 8-step-deep memory makes blockwise and stochastic sampling
            // indistinguishable.
            batch_size: 32,
            seed: 1,
            log_interval: 50,
            checkpoint_interval_epochs: 100,
            collapse_patience_steps: 400,
            out_dir: PathBuf::from("runs/desk"),
            eval_per_class: 100,
        }
    }
}

impl TrainConfig {
    /// The full-scale preset from the reference setup (ViT-scale training).
    /// Not runnable on a desk machine; kept for documentation and for
    /// exporting `configs/paper-full-scale.cfg`.
    pub fn paper_preset() -> Self {
        TrainConfig {
            dataset: DatasetSpec::Csv {
                path: PathBuf::from("imagenet-features.csv"),
            },
            backbone_widths: vec![2048, 2048],
            head_hidden: 2048,
            embed_dim: 256,
            memory_size: 65536,
            block_size: 16384,
            tau_t_start: 0.04,
            tau_t_end: 0.07,
            tau_t_warmup_epochs: 30,
            ema_start: 0.996,
            ema_end: 1.0,
            lr_start: 1e-5,
            lr_end: 1e-6,
            epochs: 800,
            batch_size: 1024,
            global_views: 2,
            local_views: 10,
            out_dir: PathBuf::from("runs/full-scale"),
            ..TrainConfig::default()
        }
    }

    pub fn strategy(&self) -> Result<SamplingStrategy, CliError> {
        self.sampling
            .parse()
            .map_err(|e: String| CliError::Config(e))
    }

    /// How many vectors one step enqueues.
    pub fn enqueue_rows(&self) -> usize {
        match self.enqueue_policy {
            EnqueuePolicy::OneGlobal => self.batch_size,
            EnqueuePolicy::BothGlobals => 2 * self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.block_size < 2 {
            return fail(format!("block_size {} must be >= 2", self.block_size));
        }
        if !self.memory_size.is_multiple_of(self.block_size) {
            return fail(format!(
                "block_size {} must divide memory_size {}",
                self.block_size, self.memory_size
            ));
        }
        self.strategy()?;
        if self.global_views < 2 {
            return fail(format!(
                "global_views {} must be >= 2 (the teacher needs two targets)",
                self.global_views
            ));
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if self.enqueue_rows() > self.memory_size {
            return fail(format!(
                "one step would enqueue {} vectors into a memory of {}",
                self.enqueue_rows(),
                self.memory_size
            ));
        }
        if self.embed_dim < 2 {
            return fail(format!("embed_dim {} must be >= 2", self.embed_dim));
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1".into());
        }
        if self.tau_s <= 0.0 || self.tau_t_start <= 0.0 || self.tau_t_end <= 0.0 {
            return fail("temperatures must be positive".into());
        }
        if self.tau_t_warmup_epochs < 1 {
            return fail("tau_t_warmup_epochs must be >= 1".into());
        }
        for (name, p) in [
            ("global_dropout", self.global_dropout),
            ("local_dropout", self.local_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} {p} must lie in [0, 1)"));
            }
        }
        if let DatasetSpec::Blobs {
            classes,
            per_class,
            dim,
            separation,
            ..
        } = &self.dataset
        {
            if *classes < 2 || *per_class < 1 || *dim < 2 || *separation <= 0.0 {
                return fail("invalid blobs parameters".into());
            }
            if *per_class * *classes < self.batch_size {
                return fail(format!(
                    "dataset of {} rows is smaller than one batch ({})",
                    per_class * classes,
                    self.batch_size
                ));
            }
        }
        if self.log_interval < 1 || self.checkpoint_interval_epochs < 1 {
            return fail("intervals must be >= 1".into());
        }
        Ok(())
    }

    /// Parse a key=value config file over the desk defaults.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{origin}:{}: expected `key = value`", idx + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", idx + 1)))?;
        }
        Ok(())
    }

    /// Set one field from its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| format!("bad value for {key}: {e}"))
        }
        match key {
            "dataset" => {
                if value == "blobs" {
                    if !matches!(self.dataset, DatasetSpec::Blobs { .. }) {
                        self.dataset = match TrainConfig::default().dataset {
                            d @ DatasetSpec::Blobs { .. } => d,
                            _ => unreachable!(),
                        };
                    }
                } else if let Some(path) = value.strip_prefix("csv:") {
                    self.dataset = DatasetSpec::Csv {
                        path: PathBuf::from(path),
                    };
                } else {
                    return Err(format!(
                        "dataset must be `blobs` or `csv:PATH`, got `{value}`"
                    ));
                }
            }
            "blobs_classes" | "blobs_per_class" | "blobs_dim" | "blobs_separation"
            | "blobs_noise" => {
                let DatasetSpec::Blobs {
                    classes,
                    per_class,
                    dim,
                    separation,
                    noise,
                } = &mut self.dataset
                else {
                    return Err(format!("{key} requires dataset = blobs"));
                };
                match key {
                    "blobs_classes" => *classes = num(key, value)?,
                    "blobs_per_class" => *per_class = num(key, value)?,
                    "blobs_dim" => *dim = num(key, value)?,
                    "blobs_separation" => *separation = num(key, value)?,
                    "blobs_noise" => *noise = num(key, value)?,
                    _ => unreachable!(),
                }
            }
            "backbone_widths" => {
                self.backbone_widths = value
                    .split(',')
                    .map(|w| num::<usize>(key, w.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "head_hidden" => self.head_hidden = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "memory_size" => self.memory_size = num(key, value)?,
            "block_size" => self.block_size = num(key, value)?,
            "sampling" => {
                value.parse::<SamplingStrategy>()?;
                self.sampling = value.to_string();
            }
            "tau_s" => self.tau_s = num(key, value)?,
            "tau_t_start" => self.tau_t_start = num(key, value)?,
            "tau_t_end" => self.tau_t_end = num(key, value)?,
            "tau_t_warmup_epochs" => self.tau_t_warmup_epochs = num(key, value)?,
            "enqueue_policy" => {
                self.enqueue_policy = match value {
                    "one-global" => EnqueuePolicy::OneGlobal,
                    "both-globals" => EnqueuePolicy::BothGlobals,
                    other => {
                        return Err(format!(
                            "enqueue_policy must be one-global or both-globals, got `{other}`"
                        ))
                    }
                }
            }
            "global_views" => self.global_views = num(key, value)?,
            "local_views" => self.local_views = num(key, value)?,
            "global_noise" => self.global_noise = num(key, value)?,
            "global_dropout" => self.global_dropout = num(key, value)?,
            "global_scale_jitter" => self.global_scale_jitter = num(key, value)?,
            "local_noise" => self.local_noise = num(key, value)?,
            "local_dropout" => self.local_dropout = num(key, value)?,
            "local_scale_jitter" => self.local_scale_jitter = num(key, value)?,
            "lr_start" => self.lr_start = num(key, value)?,
            "lr_end" => self.lr_end = num(key, value)?,
            "weight_decay_start" => self.weight_decay_start = num(key, value)?,
            "weight_decay_end" => self.weight_decay_end = num(key, value)?,
            "ema_start" => self.ema_start = num(key, value)?,
            "ema_end" => self.ema_end = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "log_interval" => self.log_interval = num(key, value)?,
            "checkpoint_interval_epochs" => self.checkpoint_interval_epochs = num(key, value)?,
            "collapse_patience_steps" => self.collapse_patience_steps = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "eval_per_class" => self.eval_per_class = num(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }
}
