//! Run directories and their manifests.
//!
//! A run with id `ID` under output directory `OUT` owns `OUT/ID/`:
//! `manifest.json`, `metrics.csv` and `checkpoints/`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::checkpoint::{checkpoint_file_name, save_checkpoint};
use super::config::{config_digest, to_pretty};
use crate::error::{Error, Result};
use crate::trainer::{train, TrainOutput, TrainerConfig};

/// Environment variable that overrides the default output directory.
pub const OUT_DIR_ENV: &str = "COOLDOWN_LAB_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_id: String,
    /// FNV-1a of the canonical config JSON, as 16 hex digits.
    pub config_digest: String,
    pub created_unix_secs: u64,
    pub metrics_csv: String,
    pub checkpoints_dir: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl RunManifest {
    pub fn new(run_id: &str, config: &TrainerConfig) -> Self {
        let created_unix_secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            run_id: run_id.to_string(),
            config_digest: format!("{:016x}", config_digest(config)),
            created_unix_secs,
            metrics_csv: METRICS_FILE.to_string(),
            checkpoints_dir: CHECKPOINT_DIR.to_string(),
            status: RunStatus::Running,
            message: None,
        }
    }

    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(run_dir.as_ref().join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, run_dir: impl AsRef<Path>) -> Result<()> {
        fs::write(run_dir.as_ref().join(MANIFEST_FILE), to_pretty(self))?;
        Ok(())
    }
}

/// `flag`, else the environment override, else `runs`.
pub fn output_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

pub fn default_run_id(config: &TrainerConfig) -> String {
    format!("run-{:016x}", config_digest(config))
}

fn check_run_id(run_id: &str) -> Result<()> {
    let ok = !run_id.is_empty()
        && run_id != "."
        && run_id != ".."
        && run_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "run id `{run_id}` must be non-empty and use only [A-Za-z0-9._-]"
        )))
    }
}

/// Claims `out_dir/run_id`. An existing run is refused unless `force`, in
/// which case its directory is cleared first.
pub fn prepare_run_dir(out_dir: &Path, run_id: &str, force: bool) -> Result<PathBuf> {
    check_run_id(run_id)?;
    let dir = out_dir.join(run_id);
    if dir.join(MANIFEST_FILE).exists() {
        if !force {
            return Err(Error::domain(format!(
                "run `{run_id}` already exists in {}; pass --force to overwrite",
                out_dir.display()
            )));
        }
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    Ok(dir)
}

/// Writes the metrics CSV and every checkpoint of `output` into `run_dir`.
pub fn write_outputs(run_dir: &Path, output: &TrainOutput) -> Result<()> {
    let f = fs::File::create(run_dir.join(METRICS_FILE))?;
    output.record.write_csv(BufWriter::new(f))?;
    let ck_dir = run_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ck_dir)?;
    for c in &output.checkpoints {
        save_checkpoint(c, ck_dir.join(checkpoint_file_name(c)))?;
    }
    Ok(())
}

/// Trains `config` into its own run directory, keeping the manifest status
/// current. Divergence is recorded in the manifest and then returned.
pub fn execute_run(
    out_dir: &Path,
    run_id: &str,
    config: &TrainerConfig,
    force: bool,
) -> Result<(RunManifest, TrainOutput)> {
    config.validate()?;
    let dir = prepare_run_dir(out_dir, run_id, force)?;
    let mut manifest = RunManifest::new(run_id, config);
    manifest.save(&dir)?;
    fs::write(dir.join("config.json"), to_pretty(config))?;
    match train(config) {
        Ok(output) => {
            write_outputs(&dir, &output)?;
            manifest.status = RunStatus::Complete;
            manifest.save(&dir)?;
            Ok((manifest, output))
        }
        Err(e) => {
            if matches!(e, Error::Diverged { .. }) {
                manifest.status = RunStatus::Diverged;
            }
            manifest.message = Some(e.to_string());
            manifest.save(&dir)?;
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleSpec;
    use crate::trainer::TaskSpec;

    fn small() -> TrainerConfig {
        TrainerConfig {
            task: TaskSpec::noisy_quadratic(4, 0.1, 1.0, 0.1),
            schedule: ScheduleSpec::constant(0.05, 30, 3),
            eval_every: 10,
            checkpoint_every: 10,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn refuses_existing_run_without_force() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small();
        let (m, _) = execute_run(tmp.path(), "a", &cfg, false).unwrap();
        assert_eq!(m.status, RunStatus::Complete);
        assert_eq!(RunManifest::load(tmp.path().join("a")).unwrap(), m);
        assert!(execute_run(tmp.path(), "a", &cfg, false).is_err());
        assert!(execute_run(tmp.path(), "a", &cfg, true).is_ok());
        assert!(execute_run(tmp.path(), "../x", &cfg, false).is_err());
    }

    #[test]
    fn divergence_is_recorded() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.method = crate::trainer::Method::Sgd;
        cfg.optimizer.clip_max = None;
        cfg.task = TaskSpec::noisy_quadratic(4, 1.0, 100.0, 0.0);
        cfg.schedule = ScheduleSpec::constant(10.0, 300, 0);
        let err = execute_run(tmp.path(), "boom", &cfg, false).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        let m = RunManifest::load(tmp.path().join("boom")).unwrap();
        assert_eq!(m.status, RunStatus::Diverged);
    }

    #[test]
    fn env_override_only_when_flag_absent() {
        assert_eq!(output_dir(Some(Path::new("x"))), PathBuf::from("x"));
    }
}
