//! Grid sweeps over one base configuration.
//!
//! Runs are the cartesian product of the grid axes (first axis slowest) times
//! `repeats`. Run `i` trains with seed `derive_seed(seed, i)`, where `seed` is
//! the run's own config seed after overrides. Each run writes only into its
//! own directory, so the outputs do not depend on how many run at once.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use super::config::{config_from_value, set_path};
use super::manifest::{execute_run, RunStatus};
use crate::error::{Error, Result};
use crate::trainer::TrainerConfig;
use crate::util::{derive_seed, fmt_decimal};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for GridAxis {
    type Err = Error;

    /// `dotted.key=v1,v2,...`
    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::domain(format!("grid axis `{s}` must look like key=v1,v2")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if key.trim().is_empty() || values.iter().any(|v| v.is_empty()) {
            return Err(Error::domain(format!("grid axis `{s}` has an empty key or value")));
        }
        Ok(Self {
            key: key.trim().to_string(),
            values,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub index: usize,
    pub run_id: String,
    pub overrides: Vec<String>,
    pub config: TrainerConfig,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub run: SweepRun,
    pub status: RunStatus,
    pub final_eval_loss: Option<f64>,
}

/// Expands `base` into one validated config per run.
pub fn expand(base: &Value, axes: &[GridAxis], repeats: usize, sweep_id: &str) -> Result<Vec<SweepRun>> {
    if repeats == 0 {
        return Err(Error::domain("repeats must be >= 1"));
    }
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push(v.clone());
                    next
                })
            })
            .collect();
    }
    let mut runs = Vec::with_capacity(combos.len() * repeats);
    for combo in &combos {
        let mut doc = base.clone();
        for (axis, v) in axes.iter().zip(combo) {
            set_path(&mut doc, &axis.key, v)?;
        }
        let config = config_from_value(doc)?;
        for _ in 0..repeats {
            let index = runs.len();
            let mut config = config.clone();
            config.seed = derive_seed(config.seed, index as u64);
            runs.push(SweepRun {
                index,
                run_id: format!("{sweep_id}-{index:04}"),
                overrides: combo.clone(),
                config,
            });
        }
    }
    Ok(runs)
}

/// Executes `runs` on `concurrency` threads. A diverged run is recorded and
/// does not stop the others; any other error aborts the sweep.
pub fn run_sweep(runs: &[SweepRun], out_dir: &Path, concurrency: usize, force: bool) -> Result<Vec<SweepResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    fs::create_dir_all(out_dir)?;
    pool.install(|| {
        runs.par_iter()
            .map(|run| match execute_run(out_dir, &run.run_id, &run.config, force) {
                Ok((_, out)) => Ok(SweepResult {
                    run: run.clone(),
                    status: RunStatus::Complete,
                    final_eval_loss: Some(out.record.final_eval_loss()),
                }),
                Err(Error::Diverged { .. }) => Ok(SweepResult {
                    run: run.clone(),
                    status: RunStatus::Diverged,
                    final_eval_loss: None,
                }),
                Err(e) => Err(e),
            })
            .collect()
    })
}

/// `run_id,index,seed,<axis keys>,status,final_eval_loss`, in run order.
pub fn write_summary<W: std::io::Write>(axes: &[GridAxis], results: &[SweepResult], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["run_id".to_string(), "index".into(), "seed".into()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header.extend(["status".to_string(), "final_eval_loss".into()]);
    w.write_record(&header)?;
    let mut sorted: Vec<&SweepResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.run.index);
    for r in sorted {
        let mut rec = vec![r.run.run_id.clone(), r.run.index.to_string(), r.run.config.seed.to_string()];
        rec.extend(r.run.overrides.iter().cloned());
        rec.push(
            match r.status {
                RunStatus::Complete => "complete",
                RunStatus::Diverged => "diverged",
                RunStatus::Running => "running",
            }
            .to_string(),
        );
        rec.push(r.final_eval_loss.map(fmt_decimal).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
