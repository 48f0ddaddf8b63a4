//! Ablation harness: sweep memory size, block size, or sampling strategy
//! over several seeds, training and evaluating each setting.
//!
//! Runs are independent, so they fan out across workers; each row depends
//! only on its own (setting, seed).

use std::fmt::Write as _;
use std::path::Path;

use massl::evalkit::{knn_probe, KnnConfig};
use massl::par;

use crate::config::TrainConfig;
use crate::trainer::{EncoderSel, Trainer};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    MemorySize,
    BlockSize,
    Sampling,
}

impl std::str::FromStr for Sweep {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "memory-size" => Ok(Sweep::MemorySize),
            "block-size" => Ok(Sweep::BlockSize),
            "sampling" => Ok(Sweep::Sampling),
            other => Err(format!(
                "unknown sweep `{other}` (expected memory-size, block-size, or sampling)"
            )),
        }
    }
}

impl Sweep {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sweep::MemorySize => "memory-size",
            Sweep::BlockSize => "block-size",
            Sweep::Sampling => "sampling",
        }
    }
}

/// One (setting, seed) outcome.
#[derive(Debug, Clone)]
pub struct AblateRow {
    pub setting: String,
    pub seed: u64,
    pub knn20: f64,
    pub collapse_steps: u64,
    pub collapsed_at_end: bool,
    pub final_loss: f64,
    pub final_feature_std: f64,
    pub final_entropy_ratio: f64,
}

/// Configs for every point of the sweep, labeled.
fn sweep_settings(base: &TrainConfig, sweep: Sweep) -> Vec<(String, TrainConfig)> {
    match sweep {
        Sweep::MemorySize => [64usize, 128, 256, 512, 1024, 2048]
            .iter()
            .map(|&k| {
                let mut cfg = base.clone();
                cfg.memory_size = k;
                cfg.block_size = cfg.block_size.min(k).max(2);
                // Keep N_b | K as K shrinks below the base block size.
                while k % cfg.block_size != 0 {
                    cfg.block_size /= 2;
                }
                (format!("K={k}"), cfg)
            })
            .collect(),
        Sweep::BlockSize => [32usize, 64, 128, 256, 512]
            .iter()
            .filter(|&&nb| base.memory_size.is_multiple_of(nb))
            .map(|&nb| {
                let mut cfg = base.clone();
                cfg.block_size = nb;
                (format!("Nb={nb}"), cfg)
            })
            .collect(),
        Sweep::Sampling => ["stochastic", "blockwise"]
            .iter()
            .map(|&s| {
                let mut cfg = base.clone();
                cfg.sampling = s.to_string();
                (s.to_string(), cfg)
            })
            .collect(),
    }
}

/// Train and evaluate one configured run; k-NN(k=20) on the held-out split
/// with teacher features.
pub fn run_one(cfg: &TrainConfig) -> Result<AblateRow, CliError> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let summary = trainer.run(None)?;
    let eval_set = trainer
        .eval_set()
        .ok_or_else(|| CliError::Config("ablation needs a synthetic dataset".into()))?
        .clone();
    let ref_feats = trainer.embed(trainer.dataset(), EncoderSel::Teacher)?;
    let query_feats = trainer.embed(&eval_set, EncoderSel::Teacher)?;
    let knn20 = knn_probe(
        &ref_feats,
        trainer.dataset().labels(),
        &query_feats,
        eval_set.labels(),
        &KnnConfig {
            k: 20.min(ref_feats.len()),
            temperature: 0.07,
        },
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    Ok(AblateRow {
        setting: String::new(),
        seed: cfg.seed,
        knn20,
        collapse_steps: summary.collapse_steps,
        collapsed_at_end: summary.collapsed_at_end,
        final_loss: summary.final_loss,
        final_feature_std: summary.final_feature_std,
        final_entropy_ratio: summary.final_entropy_ratio,
    })
}

/// The full sweep: every setting x every seed, in parallel.
pub fn run_sweep(base: &TrainConfig, sweep: Sweep, seeds: u64) -> Result<Vec<AblateRow>, CliError> {
    let settings = sweep_settings(base, sweep);
    let mut jobs = Vec::new();
    for (label, cfg) in &settings {
        for s in 0..seeds {
            let mut cfg = cfg.clone();
            cfg.seed = base.seed + s;
            jobs.push((label.clone(), cfg));
        }
    }
    let results = par::map_indexed(jobs.len(), |i| {
        let (label, cfg) = &jobs[i];
        run_one(cfg).map(|mut row| {
            row.setting = label.clone();
            row
        })
    });
    results.into_iter().collect()
}

pub fn rows_to_csv(rows: &[AblateRow]) -> String {
    let mut out = String::from(
        "setting,seed,knn20,collapse_steps,collapsed_at_end,final_loss,final_feature_std,final_entropy_ratio\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.setting,
            r.seed,
            r.knn20,
            r.collapse_steps,
            r.collapsed_at_end,
            r.final_loss,
            r.final_feature_std,
            r.final_entropy_ratio
        );
    }
    out
}

pub fn write_rows(rows: &[AblateRow], path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, rows_to_csv(rows))?;
    Ok(())
}
