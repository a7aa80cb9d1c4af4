//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 invalid configuration,
//! 4 corrupt checkpoint, 5 divergence.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod sweep;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::averaging::lawa_average;
use crate::compute::{flops_for_tokens, flops_per_sequence, flops_per_token, plan_suite, savings, write_plan_csv, ModelConfig, Strategy, Throughput};
use crate::error::{Error, Result};
use crate::lawfit::{fit, read_points_csv, FitOptions};
use crate::schedule::{schedule_table, write_schedule_csv, CooldownShape};
use crate::trainer::{evaluate, interpolation_probe, resume_with_cooldown, Checkpoint, CheckpointKind};
use crate::util::fmt_decimal;

use checkpoint::{load_checkpoint, save_checkpoint};
use config::{from_value, load_config, parse_document, parse_schedule, to_pretty};
use manifest::{default_run_id, execute_run, output_dir, prepare_run_dir, write_outputs, RunManifest, RunStatus};
use sweep::{expand, run_sweep, write_summary, GridAxis, SUMMARY_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;
pub const EXIT_DIVERGED: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "cooldown-lab", version, about = "Constant-LR + cooldown experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the learning-rate table of a schedule as CSV.
    Schedule {
        /// Schedule document, or a trainer config with a `schedule` section.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: u64,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FLOPs breakdown of a model config as JSON.
    Flops {
        #[arg(long)]
        config: PathBuf,
        /// Also report the cost of training on this many tokens.
        #[arg(long)]
        tokens: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan a scaling suite under cosine, cooldown and SWA strategies.
    Plan {
        /// JSON array of model configs.
        #[arg(long)]
        models: PathBuf,
        /// Comma-separated tokens-per-parameter ratios, increasing.
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0.2)]
        cooldown_fraction: f64,
        /// Peak FLOP/s of one GPU; enables GPU-hour estimates.
        #[arg(long, requires = "utilization")]
        gpu_flops: Option<f64>,
        #[arg(long, requires = "gpu_flops")]
        utilization: Option<f64>,
        /// JSON report; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-run cost table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fit L(N, D) = A/N^alpha + B/D^beta + E to a `n_params,tokens,loss` CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Fit options JSON.
        #[arg(long)]
        options: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one config into a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Branch a cooldown from a constant-LR checkpoint.
    Cooldown {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        decay_steps: u64,
        /// linear, one_minus_sqrt, cosine, mirror_cosine, one_minus_square or power:A
        #[arg(long, default_value = "one_minus_sqrt", value_parser = parse_shape)]
        shape: CooldownShape,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Average the last `j` checkpoints (LAWA) into a new checkpoint.
    Swa {
        /// Checkpoints in chronological order.
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        /// Number of most recent checkpoints to average; all when absent.
        #[arg(long)]
        last: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the straight line between two checkpoints.
    Interp {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        to: PathBuf,
        #[arg(long, default_value_t = 11)]
        points: usize,
        /// CSV `t,eval_loss`; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of configs derived from one base config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `dotted.key=v1,v2`; repeatable, first axis varies slowest.
        #[arg(long)]
        grid: Vec<GridAxis>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[arg(long, default_value = "sweep")]
        sweep_id: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Defaults to a digest of the config.
    #[arg(long)]
    run_id: Option<String>,
    /// Overrides COOLDOWN_LAB_OUT_DIR (default `runs`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overwrite an existing run with the same id.
    #[arg(long)]
    force: bool,
}

/// `linear`, `one_minus_sqrt`, ... or `power:A`.
pub fn parse_shape(s: &str) -> std::result::Result<CooldownShape, String> {
    if let Some(a) = s.strip_prefix("power:") {
        let a: f64 = a.parse().map_err(|e| format!("power exponent: {e}"))?;
        return Ok(CooldownShape::Power(a));
    }
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!("unknown shape `{s}`; expected linear, one_minus_sqrt, cosine, mirror_cosine, one_minus_square or power:A")
    })
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Invalid(_) => EXIT_CONFIG,
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_with<F>(out: Option<&Path>, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match out {
        Some(p) => {
            let mut w = BufWriter::new(fs::File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut w = std::io::stdout().lock();
            f(&mut w)?;
        }
    }
    Ok(())
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    from_value(parse_document(&fs::read_to_string(path)?)?)
}

#[derive(Serialize)]
struct FlopsReport {
    model: ModelConfig,
    embedding: u128,
    attention_per_layer: u128,
    dense_per_layer: u128,
    final_logits: u128,
    forward_per_sequence: u128,
    total_per_sequence: u128,
    per_token: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_for_tokens: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio_to_6nd: Option<f64>,
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Schedule { config, stride, out } => {
            let spec = parse_schedule(&fs::read_to_string(config)?)?;
            let rows = schedule_table(&spec, stride)?;
            emit_with(out.as_deref(), |w| write_schedule_csv(&rows, w))?;
            Ok(EXIT_OK)
        }
        Command::Flops { config, tokens, out } => {
            let model: ModelConfig = load_json(&config)?;
            model.validate()?;
            let b = flops_per_sequence(&model)?;
            let total = tokens.map(|t| flops_for_tokens(&model, t)).transpose()?;
            let report = FlopsReport {
                embedding: b.embedding,
                attention_per_layer: b.attention,
                dense_per_layer: b.dense,
                final_logits: b.final_logits,
                forward_per_sequence: b.single_forward,
                total_per_sequence: b.total,
                per_token: flops_per_token(&model)?,
                tokens,
                total_for_tokens: total,
                ratio_to_6nd: tokens
                    .zip(total)
                    .map(|(t, f)| f / (6.0 * model.param_count as f64 * t as f64)),
                model,
            };
            emit(out.as_deref(), &to_pretty(&report))?;
            Ok(EXIT_OK)
        }
        Command::Plan {
            models,
            ratios,
            cooldown_fraction,
            gpu_flops,
            utilization,
            out,
            csv,
        } => {
            let models: Vec<ModelConfig> = load_json(&models)?;
            for m in &models {
                m.validate()?;
            }
            let cosine = plan_suite(&models, &ratios, Strategy::CosinePerLength)?;
            let cooldown = plan_suite(&models, &ratios, Strategy::ConstantPlusCooldown { cooldown_fraction })?;
            let swa = plan_suite(&models, &ratios, Strategy::ConstantPlusSwa)?;
            let tp = gpu_flops.zip(utilization).map(|(flops_per_sec, utilization)| Throughput {
                flops_per_sec,
                utilization,
            });
            let report = json!({
                "plans": [&cosine, &cooldown, &swa],
                "savings": [savings(&cosine, &cooldown, tp)?, savings(&cosine, &swa, tp)?],
            });
            if let Some(p) = csv {
                let f = BufWriter::new(fs::File::create(p)?);
                write_plan_csv(&[&cosine, &cooldown, &swa], f)?;
            }
            emit(out.as_deref(), &to_pretty(&report))?;
            Ok(EXIT_OK)
        }
        Command::Fit { data, options, out } => {
            let points = read_points_csv(fs::File::open(data)?)?;
            let opts: FitOptions = match options {
                Some(p) => load_json(&p)?,
                None => FitOptions::default(),
            };
            let report = fit(&points, &opts)?;
            emit(out.as_deref(), &to_pretty(&report))?;
            Ok(EXIT_OK)
        }
        Command::Train { config, run } => {
            let cfg = load_config(&config)?;
            let out_dir = output_dir(run.out_dir.as_deref());
            let run_id = run.run_id.unwrap_or_else(|| default_run_id(&cfg));
            let (_, output) = execute_run(&out_dir, &run_id, &cfg, run.force)?;
            eprintln!(
                "{run_id}: final eval loss {}",
                fmt_decimal(output.record.final_eval_loss())
            );
            println!("{}", out_dir.join(&run_id).display());
            Ok(EXIT_OK)
        }
        Command::Cooldown {
            checkpoint,
            decay_steps,
            shape,
            run,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let out_dir = output_dir(run.out_dir.as_deref());
            let run_id = run.run_id.unwrap_or_else(|| {
                format!("{}-cooldown-{}-{}", default_run_id(&ckpt.config), ckpt.step, decay_steps)
            });
            let output = resume_with_cooldown(&ckpt, decay_steps, shape)?;
            let branch = output.checkpoints.last().map_or(&ckpt.config, |c| &c.config);
            let dir = prepare_run_dir(&out_dir, &run_id, run.force)?;
            write_outputs(&dir, &output)?;
            fs::write(dir.join("config.json"), to_pretty(branch))?;
            let mut m = RunManifest::new(&run_id, branch);
            m.status = RunStatus::Complete;
            m.save(&dir)?;
            eprintln!(
                "{run_id}: final eval loss {}",
                fmt_decimal(output.record.final_eval_loss())
            );
            println!("{}", dir.display());
            Ok(EXIT_OK)
        }
        Command::Swa { checkpoints, last, out } => {
            let ckpts = checkpoints
                .iter()
                .map(load_checkpoint)
                .collect::<Result<Vec<Checkpoint>>>()?;
            let j = last.unwrap_or(ckpts.len());
            let means: Vec<&[f64]> = ckpts.iter().map(|c| c.params.as_slice()).collect();
            let newest = ckpts.last().expect("clap requires one checkpoint");
            for c in &ckpts {
                if c.config.task != newest.config.task {
                    return Err(Error::domain("checkpoints come from different tasks"));
                }
            }
            let avg = Checkpoint {
                kind: CheckpointKind::SwaWindow,
                step: newest.step,
                params: lawa_average(&means, j)?,
                config: newest.config.clone(),
                state: None,
            };
            let loss = evaluate(&avg)?;
            save_checkpoint(&avg, &out)?;
            println!("{}", fmt_decimal(loss));
            Ok(EXIT_OK)
        }
        Command::Interp { from, to, points, out } => {
            let a = load_checkpoint(&from)?;
            let b = load_checkpoint(&to)?;
            let path = interpolation_probe(&a, &b, points)?;
            emit_with(out.as_deref(), |w| {
                let mut w = csv::WriterBuilder::new()
                    .terminator(csv::Terminator::Any(b'\n'))
                    .from_writer(w);
                w.write_record(["t", "eval_loss"])?;
                for (t, l) in path {
                    w.write_record([fmt_decimal(t), fmt_decimal(l)])?;
                }
                w.flush()?;
                Ok(())
            })?;
            Ok(EXIT_OK)
        }
        Command::Sweep {
            config,
            grid,
            repeats,
            concurrency,
            sweep_id,
            out_dir,
            force,
        } => {
            let base = parse_document(&fs::read_to_string(&config)?)?;
            let runs = expand(&base, &grid, repeats, &sweep_id)?;
            let out_dir = output_dir(out_dir.as_deref());
            let results = run_sweep(&runs, &out_dir, concurrency, force)?;
            let summary = out_dir.join(format!("{sweep_id}-{SUMMARY_FILE}"));
            write_summary(&grid, &results, BufWriter::new(fs::File::create(&summary)?))?;
            println!("{}", summary.display());
            let diverged = results.iter().filter(|r| r.status == RunStatus::Diverged).count();
            if diverged > 0 {
                eprintln!("error: {diverged} of {} runs diverged", results.len());
                return Ok(EXIT_DIVERGED);
            }
            Ok(EXIT_OK)
        }
    }
}
