//! The training loop: view generation, student/teacher forward, block
//! sampling, the consistency loss, AdamW, EMA distillation, and the FIFO
//! memory update — in that order, every step.
//!
//! All randomness is derived from (master seed, epoch, batch, view) paths,
//! so a run is a pure function of its config and checkpoints resume it
//! bit-exactly.

use std::path::Path;
use std::time::Instant;

use massl::data::{batches, load_csv, make_blobs, AugmentSpec, Dataset, ViewBatch, ViewRecipe};
use massl::evalkit::{
    clustering_metrics, knn_probe, linear_probe, Diagnostics, KnnConfig, LinearProbeConfig,
};
use massl::memory::{sample_blocks, BlockPlan, Memory, SamplingStrategy};
use massl::model::{backward, forward, forward_cached, ArchConfig, ModelParams};
use massl::numkernel::{Mat, UnitVec};
use massl::objective::{massl_loss_with, LossConfig, LossReport, LossWorkspace};
use massl::optim::{adamw_step, eval_schedule, teacher_temperature, AdamWState, ScheduleSpec};
use massl::rng::Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetSpec, EnqueuePolicy, TrainConfig};
use crate::metrics::{JsonlWriter, MetricsRecord, SummaryTable};
use crate::CliError;

// RNG stream tags. Changing these invalidates old seeds, not old checkpoints.
const TAG_DATA: u64 = 0xD0;
const TAG_MEMORY: u64 = 0xD1;
const TAG_STUDENT: u64 = 0xD2;
const TAG_PLAN: u64 = 0xD4;

/// Which encoder embeds data for evaluation/export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderSel {
    Teacher,
    Student,
}

impl std::str::FromStr for EncoderSel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "teacher" => Ok(EncoderSel::Teacher),
            "student" => Ok(EncoderSel::Student),
            other => Err(format!("encoder must be teacher or student, got `{other}`")),
        }
    }
}

/// Per-step outcome, also the source of each metrics record.
#[derive(Debug, Clone)]
pub struct StepStats {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau_t: f64,
    pub ema_momentum: f64,
    pub diag: Diagnostics,
    /// Memory generation observed when the loss was computed; the enqueue
    /// that follows bumps it by exactly one.
    pub mem_generation_at_loss: u64,
}

/// Everything a step consumed, for tests that re-derive the loss from the
/// definition. `memory_before` is the snapshot the targets were computed on.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub student_views: Vec<Vec<UnitVec>>,
    pub teacher_views: Vec<Vec<UnitVec>>,
    pub plan: BlockPlan,
    pub memory_before: Memory,
    pub tau_s: f64,
    pub tau_t: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: u64,
    pub final_loss: f64,
    /// Steps whose diagnostics tripped the collapse flag.
    pub collapse_steps: u64,
    pub final_feature_std: f64,
    pub final_entropy_ratio: f64,
    pub collapsed_at_end: bool,
    pub wall_secs: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    dataset: Dataset,
    eval_set: Option<Dataset>,
    strategy: SamplingStrategy,
    recipe: ViewRecipe,
    student: ModelParams,
    teacher: ModelParams,
    opt: AdamWState,
    memory: Memory,
    /// Completed optimizer steps.
    step: u64,
    /// Next epoch to run.
    epoch: u64,
    steps_per_epoch: u64,
    total_steps: u64,
    lr_spec: ScheduleSpec,
    wd_spec: ScheduleSpec,
    ema_spec: ScheduleSpec,
    scratch: LossWorkspace,
}

/// Build the train set and, for synthetic data, a held-out set drawn from
/// the same class centers.
fn load_data(cfg: &TrainConfig) -> Result<(Dataset, Option<Dataset>), CliError> {
    match &cfg.dataset {
        DatasetSpec::Blobs {
            classes,
            per_class,
            dim,
            separation,
            noise,
        } => {
            let mut seed_rng = Rng::derive(cfg.seed, &[TAG_DATA]);
            let data_seed = seed_rng.next_u64();
            let full = make_blobs(
                *classes,
                per_class + cfg.eval_per_class,
                *dim,
                *separation,
                *noise,
                data_seed,
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            let (train, eval) = full.split_per_class(*per_class);
            Ok((train, Some(eval)))
        }
        DatasetSpec::Csv { path } => {
            let train = load_csv(path).map_err(|e| CliError::Config(e.to_string()))?;
            Ok((train, None))
        }
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let (dataset, eval_set) = load_data(&cfg)?;
        let strategy = cfg.strategy()?;
        let arch = ArchConfig {
            input_dim: dataset.dim(),
            backbone_widths: cfg.backbone_widths.clone(),
            head_hidden: cfg.head_hidden,
            embed_dim: cfg.embed_dim,
        };
        let student = ModelParams::init(&arch, Rng::derive(cfg.seed, &[TAG_STUDENT]).next_u64())
            .map_err(|e| CliError::Config(e.to_string()))?;
        // The teacher bootstraps as an exact copy of the student.
        let teacher = student.clone();
        let opt = AdamWState::new(&student);
        let memory = Memory::init(
            cfg.memory_size,
            cfg.embed_dim,
            Rng::derive(cfg.seed, &[TAG_MEMORY]).next_u64(),
        )
        .map_err(|e| CliError::Config(e.to_string()))?;

        let steps_per_epoch = (dataset.len() / cfg.batch_size) as u64;
        if steps_per_epoch == 0 {
            return Err(CliError::Config(format!(
                "dataset of {} rows yields zero batches of {}",
                dataset.len(),
                cfg.batch_size
            )));
        }
        let total_steps = steps_per_epoch * cfg.epochs;
        let recipe = ViewRecipe {
            n_global: cfg.global_views,
            n_local: cfg.local_views,
            global_spec: AugmentSpec::new(
                cfg.global_noise,
                cfg.global_dropout,
                cfg.global_scale_jitter,
            )
            .map_err(|e| CliError::Config(e.to_string()))?,
            local_spec: AugmentSpec::new(
                cfg.local_noise,
                cfg.local_dropout,
                cfg.local_scale_jitter,
            )
            .map_err(|e| CliError::Config(e.to_string()))?,
        };
        Ok(Trainer {
            lr_spec: ScheduleSpec::cosine(cfg.lr_start, cfg.lr_end),
            wd_spec: ScheduleSpec::cosine(cfg.weight_decay_start, cfg.weight_decay_end),
            ema_spec: ScheduleSpec::cosine(cfg.ema_start, cfg.ema_end),
            scratch: LossWorkspace::new(),
            cfg,
            dataset,
            eval_set,
            strategy,
            recipe,
            student,
            teacher,
            opt,
            memory,
            step: 0,
            epoch: 0,
            steps_per_epoch,
            total_steps,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, CliError> {
        let mut t = Trainer::new(ck.config)?;
        if ck.master_seed != t.cfg.seed {
            return Err(CliError::Checkpoint(format!(
                "checkpoint seed {} disagrees with config seed {}",
                ck.master_seed, t.cfg.seed
            )));
        }
        t.student = ck.student;
        t.teacher = ck.teacher;
        t.opt = ck.opt;
        t.memory = ck.memory;
        t.step = ck.step;
        t.epoch = ck.epoch;
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            master_seed: self.cfg.seed,
            step: self.step,
            epoch: self.epoch,
            student: self.student.clone(),
            teacher: self.teacher.clone(),
            opt: self.opt.clone(),
            memory: self.memory.clone(),
        }
    }

    pub fn cfg(&self) -> &TrainConfig {
        &self.cfg
    }
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
    /// The held-out split (blobs only).
    pub fn eval_set(&self) -> Option<&Dataset> {
        self.eval_set.as_ref()
    }
    pub fn memory(&self) -> &Memory {
        &self.memory
    }
    pub fn student(&self) -> &ModelParams {
        &self.student
    }
    pub fn teacher(&self) -> &ModelParams {
        &self.teacher
    }
    pub fn current_step(&self) -> u64 {
        self.step
    }
    pub fn current_epoch(&self) -> u64 {
        self.epoch
    }
    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }
    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    fn schedules_at(&self, t: u64, epoch: u64) -> (f64, f64, f64, f64) {
        let t = t.min(self.total_steps);
        let lr = eval_schedule(&self.lr_spec, t, self.total_steps).unwrap();
        let wd = eval_schedule(&self.wd_spec, t, self.total_steps).unwrap();
        let ema = eval_schedule(&self.ema_spec, t, self.total_steps).unwrap();
        let tau_t = teacher_temperature(
            epoch,
            self.cfg.tau_t_warmup_epochs,
            self.cfg.tau_t_start,
            self.cfg.tau_t_end,
        );
        (lr, wd, ema, tau_t)
    }

    /// One optimizer step over the given batch rows.
    pub fn train_step(
        &mut self,
        indices: &[usize],
        batch_index: u64,
    ) -> Result<StepStats, CliError> {
        self.step_impl(indices, batch_index, false)
            .map(|(stats, _)| stats)
    }

    /// Like `train_step` but also returns every input the loss consumed,
    /// including the pre-enqueue memory snapshot.
    pub fn train_step_traced(
        &mut self,
        indices: &[usize],
        batch_index: u64,
    ) -> Result<(StepStats, StepTrace), CliError> {
        self.step_impl(indices, batch_index, true)
            .map(|(stats, trace)| (stats, trace.unwrap()))
    }

    fn step_impl(
        &mut self,
        indices: &[usize],
        batch_index: u64,
        want_trace: bool,
    ) -> Result<(StepStats, Option<StepTrace>), CliError> {
        let epoch = self.epoch;
        let (lr, wd, ema_m, tau_t) = self.schedules_at(self.step, epoch);

        // Views. Students see everything; the teacher only global views.
        let vb = ViewBatch::generate(
            &self.dataset,
            indices,
            &self.recipe,
            self.cfg.seed,
            epoch,
            batch_index,
        );

        let mut student_views = Vec::with_capacity(vb.n_views());
        let mut caches = Vec::with_capacity(vb.n_views());
        for m in vb.globals.iter().chain(&vb.locals) {
            let (z, cache) =
                forward_cached(&self.student, m).map_err(|e| CliError::Runtime(e.to_string()))?;
            student_views.push(z);
            caches.push(cache);
        }
        let mut teacher_views = Vec::with_capacity(vb.globals.len());
        for m in &vb.globals {
            teacher_views
                .push(forward(&self.teacher, m).map_err(|e| CliError::Runtime(e.to_string()))?);
        }

        // One fresh plan per step, shared by every view pair.
        let mut plan_rng = Rng::derive(self.cfg.seed, &[TAG_PLAN, self.step]);
        let plan = sample_blocks(
            self.cfg.memory_size,
            self.cfg.block_size,
            self.strategy,
            &mut plan_rng,
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;

        let trace = want_trace.then(|| StepTrace {
            student_views: student_views.clone(),
            teacher_views: teacher_views.clone(),
            plan: plan.clone(),
            memory_before: self.memory.clone(),
            tau_s: self.cfg.tau_s,
            tau_t,
        });

        let mem_generation_at_loss = self.memory.generation();
        let report: LossReport = massl_loss_with(
            &mut self.scratch,
            &student_views,
            &teacher_views,
            &self.memory,
            &plan,
            &LossConfig {
                tau_s: self.cfg.tau_s,
                tau_t,
            },
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;

        // Backprop each student view's projection gradient; sum in view order.
        let mut grads = self.student.zeros_grads();
        for (cache, grad_z) in caches.iter().zip(&report.grads) {
            let g = backward(&self.student, cache, grad_z)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            grads.add_assign(&g);
        }

        adamw_step(&mut self.student, &grads, &mut self.opt, lr, wd)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        massl::model::ema_update(&mut self.teacher, &self.student, ema_m)
            .map_err(|e| CliError::Runtime(e.to_string()))?;

        // Memory update comes after the loss: targets always see the
        // pre-step snapshot.
        let enqueue: Vec<UnitVec> = match self.cfg.enqueue_policy {
            EnqueuePolicy::OneGlobal => teacher_views[0].clone(),
            EnqueuePolicy::BothGlobals => teacher_views
                .iter()
                .take(2)
                .flat_map(|v| v.iter().cloned())
                .collect(),
        };
        self.memory
            .enqueue_batch(&enqueue)
            .map_err(|e| CliError::Runtime(e.to_string()))?;

        // Diagnostics from this step's teacher features and target entropy.
        let teacher_feats: Vec<UnitVec> = teacher_views.iter().flatten().cloned().collect();
        let diag = Diagnostics::from_parts(
            report.mean_target_entropy,
            self.cfg.block_size,
            &teacher_feats,
        );

        self.step += 1;
        Ok((
            StepStats {
                step: self.step,
                epoch,
                loss: report.loss,
                lr,
                weight_decay: wd,
                tau_t,
                ema_momentum: ema_m,
                diag,
                mem_generation_at_loss,
            },
            trace,
        ))
    }

    /// Run the remaining epochs, streaming metrics and checkpoints into
    /// `out_dir` when provided.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<RunSummary, CliError> {
        let started = Instant::now();
        let mut metrics = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(JsonlWriter::create(&dir.join("metrics.jsonl"))?)
            }
            None => None,
        };
        let mut final_loss = f64::NAN;
        let mut collapse_steps = 0u64;
        let mut consecutive_collapsed = 0u64;
        let mut last_diag: Option<Diagnostics> = None;

        'epochs: while self.epoch < self.cfg.epochs {
            let epoch = self.epoch;
            for (bi, batch) in batches(
                self.dataset.len(),
                self.cfg.batch_size,
                self.cfg.seed,
                epoch,
            )
            .into_iter()
            .enumerate()
            {
                let stats = self.train_step(&batch, bi as u64)?;
                final_loss = stats.loss;
                if stats.diag.collapsed {
                    collapse_steps += 1;
                    consecutive_collapsed += 1;
                } else {
                    consecutive_collapsed = 0;
                }
                let last = stats.step == self.total_steps;
                if stats.step % self.cfg.log_interval == 0 || last {
                    if let Some(w) = metrics.as_mut() {
                        w.append(&record_from(&stats, started.elapsed().as_secs_f64() * 1e3))?;
                    }
                }
                last_diag = Some(stats.diag);
            }
            self.epoch += 1;
            if let Some(dir) = out_dir {
                if self
                    .epoch
                    .is_multiple_of(self.cfg.checkpoint_interval_epochs)
                    && self.epoch < self.cfg.epochs
                {
                    self.to_checkpoint()
                        .save(&dir.join(format!("checkpoint-epoch{:04}.mssl", self.epoch)))?;
                }
            }
            // A run that has stayed collapsed this long will not be rescued
            // by more of the same steps; stop burning cycles on it.
            if self.cfg.collapse_patience_steps > 0
                && consecutive_collapsed >= self.cfg.collapse_patience_steps
            {
                break 'epochs;
            }
        }
        if let Some(w) = metrics.as_mut() {
            w.flush()?;
        }
        if let Some(dir) = out_dir {
            self.to_checkpoint().save(&dir.join("final.mssl"))?;
        }
        let diag = last_diag.unwrap_or_else(|| Diagnostics::from_parts(0.0, 2, &[]));
        Ok(RunSummary {
            steps: self.step,
            final_loss,
            collapse_steps,
            final_feature_std: diag.feature_std,
            final_entropy_ratio: diag.entropy_ratio,
            collapsed_at_end: diag.collapsed,
            wall_secs: started.elapsed().as_secs_f64(),
        })
    }

    /// Embed a dataset with the chosen frozen encoder.
    pub fn embed(&self, ds: &Dataset, encoder: EncoderSel) -> Result<Vec<UnitVec>, CliError> {
        let params = match encoder {
            EncoderSel::Teacher => &self.teacher,
            EncoderSel::Student => &self.student,
        };
        embed_with(params, ds)
    }
}

fn record_from(stats: &StepStats, wall_ms: f64) -> MetricsRecord {
    MetricsRecord {
        step: stats.step,
        epoch: stats.epoch,
        loss: stats.loss,
        lr: stats.lr,
        weight_decay: stats.weight_decay,
        tau_t: stats.tau_t,
        ema_momentum: stats.ema_momentum,
        feature_std: stats.diag.feature_std,
        target_entropy: stats.diag.mean_target_entropy,
        entropy_ratio: stats.diag.entropy_ratio,
        effective_rank: stats.diag.effective_rank,
        collapsed: stats.diag.collapsed,
        wall_ms,
    }
}

/// Embed every row of a dataset with the given encoder parameters.
pub fn embed_with(params: &ModelParams, ds: &Dataset) -> Result<Vec<UnitVec>, CliError> {
    // Batch to keep per-call allocations bounded.
    let chunk = 512;
    let mut out = Vec::with_capacity(ds.len());
    let mut row = 0;
    while row < ds.len() {
        let hi = (row + chunk).min(ds.len());
        let indices: Vec<usize> = (row..hi).collect();
        let m = ds.gather_rows(&indices);
        out.extend(forward(params, &m).map_err(|e| CliError::Runtime(e.to_string()))?);
        row = hi;
    }
    Ok(out)
}

/// Evaluation protocol flags.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub knn_k: Vec<usize>,
    pub knn_temperature: f64,
    pub linear: bool,
    pub cluster: bool,
    pub encoder: EncoderSel,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            knn_k: vec![10, 20, 100, 200],
            knn_temperature: 0.07,
            linear: false,
            cluster: false,
            encoder: EncoderSel::Teacher,
        }
    }
}

/// Embed reference and query sets with a frozen encoder and run the
/// requested probes. Reference features double as the probe training set.
pub fn evaluate(
    params: &ModelParams,
    reference: &Dataset,
    query: &Dataset,
    opts: &EvalOptions,
) -> Result<SummaryTable, CliError> {
    let ref_feats = embed_with(params, reference)?;
    let query_feats = embed_with(params, query)?;
    let mut table = SummaryTable::new();
    for &k in &opts.knn_k {
        let k_eff = k.min(ref_feats.len());
        let acc = knn_probe(
            &ref_feats,
            reference.labels(),
            &query_feats,
            query.labels(),
            &KnnConfig {
                k: k_eff,
                temperature: opts.knn_temperature,
            },
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        table.push(format!("knn@{k}"), acc);
    }
    if opts.linear {
        let acc = linear_probe(
            &ref_feats,
            reference.labels(),
            &query_feats,
            query.labels(),
            &LinearProbeConfig::default(),
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        table.push("linear", acc);
    }
    if opts.cluster {
        let flat: Vec<Vec<f64>> = query_feats.iter().map(|u| u.as_slice().to_vec()).collect();
        let scores = clustering_metrics(&Mat::from_rows(&flat), query.labels(), query.classes(), 0)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        table.push("nmi", scores.nmi);
        table.push("ami", scores.ami);
        table.push("ari", scores.ari);
    }
    Ok(table)
}

/// Write embeddings as CSV rows of embed_dim floats plus the label.
pub fn export_embeddings(
    params: &ModelParams,
    ds: &Dataset,
    out_path: &Path,
) -> Result<(), CliError> {
    use std::fmt::Write as _;
    let feats = embed_with(params, ds)?;
    let mut text = String::new();
    for (f, &label) in feats.iter().zip(ds.labels()) {
        for v in f.as_slice() {
            let _ = write!(text, "{},", *v as f32);
        }
        let _ = writeln!(text, "{label}");
    }
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out_path, text)?;
    Ok(())
}
