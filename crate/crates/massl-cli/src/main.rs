//! massl: train / eval / ablate / export.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use massl_cli::ablate::{run_sweep, write_rows, Sweep};
use massl_cli::checkpoint::Checkpoint;
use massl_cli::config::TrainConfig;
use massl_cli::trainer::{evaluate, export_embeddings, EncoderSel, EvalOptions, Trainer};
use massl_cli::CliError;

const USAGE: &str = "\
massl - memory-augmented self-supervised learning on vector data

USAGE:
    massl train  --config PATH [--seed N] [--out DIR] [--resume CKPT]
    massl eval   --checkpoint PATH --data SPEC [--test-data SPEC]
                 [--knn-k LIST] [--linear] [--cluster]
                 [--encoder teacher|student] [--out FILE]
    massl ablate --config PATH --sweep NAME [--seeds N] [--out FILE]
    massl export --checkpoint PATH --data SPEC --out FILE
                 [--encoder teacher|student]

DATA SPECS:
    train        the checkpoint's training split
    eval         the held-out split generated alongside it (blobs only)
    PATH.csv     a CSV of feature columns followed by an integer label

SWEEPS: memory-size | block-size | sampling

The MASSL_THREADS environment variable caps worker threads.
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        print!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    if let Ok(threads) = std::env::var("MASSL_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                massl::par::configure_threads(n);
            }
            _ => {
                eprintln!("error: MASSL_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cmd = args[0].as_str();
    let rest = &args[1..];
    let result = match cmd {
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "ablate" => cmd_ablate(rest),
        "export" => cmd_export(rest),
        other => {
            eprintln!("error: unknown subcommand `{other}`\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Tiny flag parser: `--key value` pairs plus boolean switches.
struct Flags {
    pairs: Vec<(String, String)>,
    switches: Vec<String>,
}

impl Flags {
    fn parse(args: &[String], switch_names: &[&str]) -> Result<Flags, CliError> {
        let mut pairs = Vec::new();
        let mut switches = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(name) = arg.strip_prefix("--") else {
                return Err(CliError::Config(format!("unexpected argument `{arg}`")));
            };
            if switch_names.contains(&name) {
                switches.push(name.to_string());
                i += 1;
            } else {
                let value = args
                    .get(i + 1)
                    .ok_or_else(|| CliError::Config(format!("missing value for --{name}")))?;
                pairs.push((name.to_string(), value.clone()));
                i += 2;
            }
        }
        Ok(Flags { pairs, switches })
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, name: &str) -> Result<&str, CliError> {
        self.get(name)
            .ok_or_else(|| CliError::Config(format!("--{name} is required")))
    }

    fn has(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }
}

fn cmd_train(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &[])?;
    let mut cfg = TrainConfig::from_file(Path::new(flags.require("config")?))?;
    if let Some(seed) = flags.get("seed") {
        cfg.seed = seed
            .parse()
            .map_err(|e| CliError::Config(format!("bad --seed: {e}")))?;
    }
    if let Some(out) = flags.get("out") {
        cfg.out_dir = PathBuf::from(out);
    }
    cfg.validate()?;

    let mut trainer = match flags.get("resume") {
        Some(path) => {
            let ck = Checkpoint::load(Path::new(path))?;
            let mut resumed_cfg = ck.config.clone();
            resumed_cfg.out_dir = cfg.out_dir.clone();
            let mut t = Trainer::from_checkpoint(Checkpoint {
                config: resumed_cfg,
                ..ck
            })?;
            eprintln!(
                "resumed from {path} at step {} (epoch {})",
                t.current_step(),
                t.current_epoch()
            );
            let _ = &mut t;
            t
        }
        None => Trainer::new(cfg.clone())?,
    };

    let out_dir = trainer.cfg().out_dir.clone();
    eprintln!(
        "training: {} epochs x {} steps, strategy {}, K={}, Nb={}, out {}",
        trainer.cfg().epochs,
        trainer.steps_per_epoch(),
        trainer.cfg().sampling,
        trainer.cfg().memory_size,
        trainer.cfg().block_size,
        out_dir.display()
    );
    let summary = trainer.run(Some(&out_dir))?;
    eprintln!(
        "done: {} steps in {:.1}s, final loss {:.4}, collapse steps {}",
        summary.steps, summary.wall_secs, summary.final_loss, summary.collapse_steps
    );
    Ok(())
}

/// Rebuild the datasets a checkpoint trained on and resolve a --data spec.
fn resolve_data(ck: &Checkpoint, spec: &str) -> Result<massl::data::Dataset, CliError> {
    match spec {
        "train" | "eval" => {
            let trainer = Trainer::from_checkpoint(ck.clone())?;
            match spec {
                "train" => Ok(trainer.dataset().clone()),
                _ => trainer
                    .eval_set()
                    .cloned()
                    .ok_or_else(|| CliError::Config("no held-out split for CSV datasets".into())),
            }
        }
        path => massl::data::load_csv(Path::new(path)).map_err(|e| CliError::Config(e.to_string())),
    }
}

fn encoder_flag(flags: &Flags) -> Result<EncoderSel, CliError> {
    match flags.get("encoder") {
        None => Ok(EncoderSel::Teacher),
        Some(v) => v.parse().map_err(CliError::Config),
    }
}

fn cmd_eval(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["linear", "cluster"])?;
    let ck = Checkpoint::load(Path::new(flags.require("checkpoint")?))?;
    let reference = resolve_data(&ck, flags.require("data")?)?;
    let query = match flags.get("test-data") {
        Some(spec) => resolve_data(&ck, spec)?,
        None => reference.clone(),
    };
    if reference.dim() != query.dim() {
        return Err(CliError::Config(format!(
            "reference dim {} != query dim {}",
            reference.dim(),
            query.dim()
        )));
    }
    let mut opts = EvalOptions {
        linear: flags.has("linear"),
        cluster: flags.has("cluster"),
        encoder: encoder_flag(&flags)?,
        ..EvalOptions::default()
    };
    if let Some(list) = flags.get("knn-k") {
        opts.knn_k = list
            .split(',')
            .map(|k| {
                k.trim()
                    .parse()
                    .map_err(|e| CliError::Config(format!("bad --knn-k entry `{k}`: {e}")))
            })
            .collect::<Result<_, _>>()?;
    }
    let params = match opts.encoder {
        EncoderSel::Teacher => &ck.teacher,
        EncoderSel::Student => &ck.student,
    };
    let table = evaluate(params, &reference, &query, &opts)?;
    print!("{}", table.to_csv());
    if let Some(out) = flags.get("out") {
        table.write_csv(Path::new(out))?;
    }
    Ok(())
}

fn cmd_ablate(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &[])?;
    let cfg = TrainConfig::from_file(Path::new(flags.require("config")?))?;
    cfg.validate()?;
    let sweep: Sweep = flags.require("sweep")?.parse().map_err(CliError::Config)?;
    let seeds: u64 = match flags.get("seeds") {
        Some(s) => s
            .parse()
            .map_err(|e| CliError::Config(format!("bad --seeds: {e}")))?,
        None => 3,
    };
    eprintln!("ablating {} with {seeds} seeds", sweep.as_str());
    let rows = run_sweep(&cfg, sweep, seeds)?;
    let csv = massl_cli::ablate::rows_to_csv(&rows);
    print!("{csv}");
    if let Some(out) = flags.get("out") {
        write_rows(&rows, Path::new(out))?;
    }
    Ok(())
}

fn cmd_export(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &[])?;
    let ck = Checkpoint::load(Path::new(flags.require("checkpoint")?))?;
    let data = resolve_data(&ck, flags.require("data")?)?;
    let out = flags.require("out")?;
    let params = match encoder_flag(&flags)? {
        EncoderSel::Teacher => &ck.teacher,
        EncoderSel::Student => &ck.student,
    };
    export_embeddings(params, &data, Path::new(out))?;
    eprintln!("wrote {} rows to {out}", data.len());
    Ok(())
}
