//! Deterministic training harness.
//!
//! A run applies `clip -> optimizer step` with `lr_at(step)` for every update,
//! logs metrics every `eval_every` steps, and snapshots full resumable state
//! at `checkpoint_every` and at schedule phase boundaries. All randomness is a
//! ChaCha stream whose word position is stored in each checkpoint, so resuming
//! continues the same stream exactly.

pub mod task;

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::averaging::{interpolate, SwaState};
use crate::error::{check_dims, Error, Result, Violation};
use crate::optim::{
    adamw_step, clip_global_norm_in_place, sgd_step, OptimizerConfig, OptimizerState, SfoState,
};
use crate::schedule::{CooldownShape, ScheduleKind, ScheduleSpec};
use crate::util::fmt_decimal;

pub use task::{Task, TaskSpec};

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Adamw,
    /// Plain gradient descent; bypasses the adaptive optimizer entirely.
    Sgd,
    /// Schedule-free AdamW; `beta1` is the interpolation weight between the
    /// base iterate and its running average.
    ScheduleFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwaConfig {
    pub window: u64,
    #[serde(default = "one")]
    pub stride: u64,
}

fn one() -> u64 {
    1
}

impl SwaConfig {
    pub fn new(window: u64) -> Self {
        Self { window, stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub seed: u64,
    pub task: TaskSpec,
    pub schedule: ScheduleSpec,
    pub method: Method,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub eval_every: u64,
    pub swa: Option<SwaConfig>,
    pub checkpoint_every: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: TaskSpec::default(),
            schedule: ScheduleSpec::default(),
            method: Method::Adamw,
            optimizer: OptimizerConfig {
                weight_decay: 0.0,
                ..OptimizerConfig::default()
            },
            batch_size: 16,
            eval_every: 100,
            swa: None,
            checkpoint_every: 1000,
        }
    }
}

impl TrainerConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = self.task.violations();
        if let Err(v) = self.schedule.validate() {
            // a zero peak is a legal frozen-weights baseline run
            let frozen = self.schedule.peak_lr == 0.0;
            out.extend(v.into_iter().filter(|v| !(frozen && v.code == "non_positive_peak")));
        }
        if let Err(v) = self.optimizer.validate() {
            out.extend(v);
        }
        if self.batch_size == 0 {
            out.push(Violation::new("zero_batch", "batch_size must be >= 1"));
        }
        if self.eval_every == 0 || self.eval_every > self.schedule.total_steps {
            out.push(Violation::new(
                "eval_every_out_of_range",
                format!(
                    "eval_every must lie in [1, total_steps = {}], got {}",
                    self.schedule.total_steps, self.eval_every
                ),
            ));
        }
        if self.checkpoint_every == 0 {
            out.push(Violation::new("zero_checkpoint_every", "checkpoint_every must be >= 1"));
        }
        if let Some(s) = self.swa {
            if s.window == 0 || s.stride == 0 {
                out.push(Violation::new("zero_swa_window", "swa window and stride must be >= 1"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub samples: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub swa_eval_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunSummary {
    pub final_step: u64,
    pub final_train_loss: f64,
    pub final_eval_loss: f64,
    pub final_swa_eval_loss: Option<f64>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunRecord {
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
}

impl RunRecord {
    pub fn final_eval_loss(&self) -> f64 {
        self.summary.final_eval_loss
    }

    pub fn row_at(&self, step: u64) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.step == step)
    }

    /// `step,samples,lr,train_loss,eval_loss,swa_eval_loss`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "samples", "lr", "train_loss", "eval_loss", "swa_eval_loss"])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.samples.to_string(),
                fmt_decimal(r.lr),
                fmt_decimal(r.train_loss),
                fmt_decimal(r.eval_loss),
                r.swa_eval_loss.map(fmt_decimal).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in r.deserialize() {
            rows.push(rec?);
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OptimizerSnapshot {
    Adamw(OptimizerState),
    Sgd { step: u64 },
    ScheduleFree(SfoState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Raw,
    SwaWindow,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub optimizer: OptimizerSnapshot,
    #[serde(with = "u128_string")]
    pub rng_cursor: u128,
    pub last_train_loss: f64,
    pub swa: Option<SwaState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub step: u64,
    /// Evaluation weights (the running average for schedule-free runs, the
    /// window mean for SWA checkpoints).
    #[serde(skip)]
    pub params: Vec<f64>,
    pub config: TrainerConfig,
    pub state: Option<ResumeState>,
}

mod u128_string {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub record: RunRecord,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainOutput {
    pub fn checkpoint_at(&self, step: u64) -> Option<&Checkpoint> {
        self.checkpoints
            .iter()
            .find(|c| c.step == step && c.kind == CheckpointKind::Raw)
    }

    pub fn swa_windows(&self) -> impl Iterator<Item = &Checkpoint> {
        self.checkpoints
            .iter()
            .filter(|c| c.kind == CheckpointKind::SwaWindow)
    }
}

enum Opt {
    Adamw(OptimizerState),
    Sgd { step: u64 },
    ScheduleFree(SfoState),
}

pub struct Trainer {
    config: TrainerConfig,
    task: Task,
    step: u64,
    params: Vec<f64>,
    opt: Opt,
    rng: ChaCha8Rng,
    swa: Option<SwaState>,
    last_train_loss: f64,
    grad: Vec<f64>,
    probe: Vec<f64>,
}

fn train_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAIN_STREAM);
    rng
}

impl Trainer {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let task = Task::new(&config.task);
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        init.set_stream(INIT_STREAM);
        let params = task.init_params(&mut init);
        let dim = params.len();
        let (params, opt) = match config.method {
            Method::Adamw => (params, Opt::Adamw(OptimizerState::new(dim))),
            Method::Sgd => (params, Opt::Sgd { step: 0 }),
            Method::ScheduleFree => (
                Vec::new(),
                Opt::ScheduleFree(SfoState::new(params, config.optimizer.beta1)),
            ),
        };
        let swa = config.swa.map(|s| SwaState::new(s.window, dim)).transpose()?;
        let last_train_loss = {
            let eval = match &opt {
                Opt::ScheduleFree(s) => &s.x,
                _ => &params,
            };
            task.eval_loss(eval)
        };
        Ok(Self {
            rng: train_rng(config.seed),
            config,
            task,
            step: 0,
            params,
            opt,
            swa,
            last_train_loss,
            grad: vec![0.0; dim],
            probe: vec![0.0; dim],
        })
    }

    /// Restores a run from a raw checkpoint, optionally with a replacement
    /// schedule (used to branch cooldowns).
    pub fn from_checkpoint(ckpt: &Checkpoint, schedule: Option<ScheduleSpec>) -> Result<Self> {
        Self::from_checkpoint_with(ckpt, |cfg| {
            if let Some(s) = schedule {
                cfg.schedule = s;
            }
        })
    }

    fn from_checkpoint_with(ckpt: &Checkpoint, edit: impl FnOnce(&mut TrainerConfig)) -> Result<Self> {
        let state = match (&ckpt.kind, &ckpt.state) {
            (CheckpointKind::Raw, Some(s)) => s,
            _ => {
                return Err(Error::domain(
                    "only raw checkpoints carry resumable training state",
                ))
            }
        };
        let mut config = ckpt.config.clone();
        edit(&mut config);
        config.validate()?;
        if ckpt.step > config.schedule.total_steps {
            return Err(Error::domain("checkpoint step lies past the schedule end"));
        }
        let task = Task::new(&config.task);
        let dim = task.dim();
        check_dims(dim, ckpt.params.len())?;
        let (params, opt) = match (&state.optimizer, config.method) {
            (OptimizerSnapshot::Adamw(s), Method::Adamw) => {
                check_dims(dim, s.m.len())?;
                check_dims(dim, s.v.len())?;
                (ckpt.params.clone(), Opt::Adamw(s.clone()))
            }
            (OptimizerSnapshot::Sgd { step }, Method::Sgd) => {
                (ckpt.params.clone(), Opt::Sgd { step: *step })
            }
            (OptimizerSnapshot::ScheduleFree(s), Method::ScheduleFree) => {
                check_dims(dim, s.z.len())?;
                check_dims(dim, s.x.len())?;
                (Vec::new(), Opt::ScheduleFree(s.clone()))
            }
            _ => {
                return Err(Error::Checkpoint(
                    "optimizer state does not match the configured method".into(),
                ))
            }
        };
        if let Some(swa) = &state.swa {
            check_dims(dim, swa.mean.len())?;
        }
        let mut rng = train_rng(config.seed);
        rng.set_word_pos(state.rng_cursor);
        Ok(Self {
            config,
            task,
            step: ckpt.step,
            params,
            opt,
            rng,
            swa: state.swa.clone(),
            last_train_loss: state.last_train_loss,
            grad: vec![0.0; dim],
            probe: vec![0.0; dim],
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn eval_params(&self) -> &[f64] {
        match &self.opt {
            Opt::ScheduleFree(s) => &s.x,
            _ => &self.params,
        }
    }

    pub fn eval_loss(&self) -> f64 {
        self.task.eval_loss(self.eval_params())
    }

    fn checkpoint(&self) -> Checkpoint {
        let optimizer = match &self.opt {
            Opt::Adamw(s) => OptimizerSnapshot::Adamw(s.clone()),
            Opt::Sgd { step } => OptimizerSnapshot::Sgd { step: *step },
            Opt::ScheduleFree(s) => OptimizerSnapshot::ScheduleFree(s.clone()),
        };
        // only the newest window mean feeds swa_eval_loss after a resume
        let swa = self.swa.as_ref().map(|s| SwaState {
            completed: s.completed.last().cloned().into_iter().collect(),
            ..s.clone()
        });
        Checkpoint {
            kind: CheckpointKind::Raw,
            step: self.step,
            params: self.eval_params().to_vec(),
            config: self.config.clone(),
            state: Some(ResumeState {
                optimizer,
                rng_cursor: self.rng.get_word_pos(),
                last_train_loss: self.last_train_loss,
                swa,
            }),
        }
    }

    /// One update with the learning rate of the current step.
    pub fn step_once(&mut self) -> Result<()> {
        let n = self.step;
        let lr = self.config.schedule.lr_at(n)?;
        let cfg = self.config.optimizer;
        let batch = self.config.batch_size;
        let loss = match &mut self.opt {
            Opt::Adamw(state) => {
                let loss = self
                    .task
                    .loss_grad(&self.params, batch, &mut self.rng, &mut self.grad);
                if let Some(c) = cfg.clip_max {
                    clip_global_norm_in_place(&mut self.grad, c);
                }
                adamw_step(state, &mut self.params, &self.grad, lr, &cfg)?;
                loss
            }
            Opt::Sgd { step } => {
                let loss = self
                    .task
                    .loss_grad(&self.params, batch, &mut self.rng, &mut self.grad);
                if let Some(c) = cfg.clip_max {
                    clip_global_norm_in_place(&mut self.grad, c);
                }
                sgd_step(&mut self.params, &self.grad, lr)?;
                *step += 1;
                loss
            }
            Opt::ScheduleFree(state) => {
                state.eval_point_into(&mut self.probe);
                let loss = self
                    .task
                    .loss_grad(&self.probe, batch, &mut self.rng, &mut self.grad);
                if let Some(c) = cfg.clip_max {
                    clip_global_norm_in_place(&mut self.grad, c);
                }
                state.apply(&self.grad, lr, &cfg)?;
                loss
            }
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step: n, loss });
        }
        self.last_train_loss = loss;
        self.step = n + 1;
        if let (Some(swa), Some(sc)) = (&mut self.swa, self.config.swa) {
            if self.step % sc.stride == 0 {
                let w = match &self.opt {
                    Opt::ScheduleFree(s) => &s.x,
                    _ => &self.params,
                };
                swa.update(self.step, w)?;
            }
        }
        Ok(())
    }

    fn row(&self) -> Result<MetricsRow> {
        let eval_loss = self.eval_loss();
        if !eval_loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                loss: eval_loss,
            });
        }
        Ok(MetricsRow {
            step: self.step,
            samples: self.step * self.config.batch_size as u64,
            lr: self.config.schedule.lr_at(self.step)?,
            train_loss: self.last_train_loss,
            eval_loss,
            swa_eval_loss: self
                .swa
                .as_ref()
                .and_then(|s| s.latest())
                .map(|m| self.task.eval_loss(m)),
        })
    }

    fn checkpoint_steps(&self) -> BTreeSet<u64> {
        let s = &self.config.schedule;
        let mut steps: BTreeSet<u64> = (1..=s.total_steps / self.config.checkpoint_every)
            .map(|k| k * self.config.checkpoint_every)
            .collect();
        if s.warmup_steps > 0 {
            steps.insert(s.warmup_steps);
        }
        if let ScheduleKind::ConstantCooldown { decay_steps, .. } = s.kind {
            steps.insert(s.total_steps - decay_steps);
        }
        steps.insert(s.total_steps);
        steps
    }

    /// Runs to the end of the schedule. Rows and checkpoints are emitted for
    /// steps after the current one (and for the current step too when it is 0).
    pub fn run(mut self) -> Result<TrainOutput> {
        let started = Instant::now();
        let total = self.config.schedule.total_steps;
        let eval_every = self.config.eval_every;
        let ckpt_steps = self.checkpoint_steps();
        let mut out = TrainOutput::default();
        if self.step == 0 {
            out.record.rows.push(self.row()?);
        }
        let mut windows_seen = self.swa.as_ref().map_or(0, |s| s.completed.len());
        while self.step < total {
            self.step_once()?;
            if let Some(swa) = &self.swa {
                for (end, mean) in &swa.completed[windows_seen..] {
                    out.checkpoints.push(Checkpoint {
                        kind: CheckpointKind::SwaWindow,
                        step: *end,
                        params: mean.clone(),
                        config: self.config.clone(),
                        state: None,
                    });
                }
                windows_seen = swa.completed.len();
            }
            if self.step % eval_every == 0 || self.step == total {
                out.record.rows.push(self.row()?);
            }
            if ckpt_steps.contains(&self.step) {
                out.checkpoints.push(self.checkpoint());
            }
        }
        let last = out.record.rows.last().copied();
        out.record.summary = RunSummary {
            final_step: self.step,
            final_train_loss: last.map_or(self.last_train_loss, |r| r.train_loss),
            final_eval_loss: last.map_or_else(|| self.eval_loss(), |r| r.eval_loss),
            final_swa_eval_loss: last.and_then(|r| r.swa_eval_loss),
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        Ok(out)
    }
}

pub fn train(config: &TrainerConfig) -> Result<TrainOutput> {
    Trainer::new(config.clone())?.run()
}

/// Continues a run from a raw checkpoint to the end of its own schedule.
pub fn resume(ckpt: &Checkpoint) -> Result<TrainOutput> {
    Trainer::from_checkpoint(ckpt, None)?.run()
}

/// Branches a cooldown of `decay_steps` from a checkpoint of a constant-LR
/// trunk. The branch keeps the trunk's peak LR and warmup, and decays with
/// `shape` from the checkpoint step to `step + decay_steps`.
pub fn resume_with_cooldown(
    ckpt: &Checkpoint,
    decay_steps: u64,
    shape: CooldownShape,
) -> Result<TrainOutput> {
    if decay_steps == 0 {
        return Err(Error::domain("cooldown length must be >= 1 step"));
    }
    let trunk = &ckpt.config.schedule;
    match trunk.kind {
        ScheduleKind::Constant => {}
        ScheduleKind::ConstantCooldown { decay_steps: d, .. } => {
            if ckpt.step > trunk.total_steps - d {
                return Err(Error::domain(format!(
                    "checkpoint at step {} is already inside the trunk's cooldown (starts at {})",
                    ckpt.step,
                    trunk.total_steps - d
                )));
            }
        }
        ScheduleKind::Cosine { .. } => {
            return Err(Error::domain(
                "cooldowns branch from constant-LR trunks, not cosine runs",
            ))
        }
    }
    if ckpt.step < trunk.warmup_steps {
        return Err(Error::domain(format!(
            "checkpoint at step {} is still inside warmup ({} steps)",
            ckpt.step, trunk.warmup_steps
        )));
    }
    let branch = ScheduleSpec::constant_cooldown(
        trunk.peak_lr,
        ckpt.step + decay_steps,
        trunk.warmup_steps,
        decay_steps,
        shape,
    );
    Trainer::from_checkpoint_with(ckpt, |cfg| {
        cfg.schedule = branch;
        cfg.eval_every = cfg.eval_every.min(branch.total_steps);
    })?
    .run()
}

/// Evaluation loss of a checkpoint's weights.
pub fn evaluate(ckpt: &Checkpoint) -> Result<f64> {
    let task = Task::new(&ckpt.config.task);
    task.check_params(&ckpt.params)?;
    Ok(task.eval_loss(&ckpt.params))
}

/// Evaluation loss along the straight line from `a` to `b` at `n_points`
/// evenly spaced interpolation weights.
pub fn interpolation_probe(a: &Checkpoint, b: &Checkpoint, n_points: usize) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return Err(Error::domain("interpolation probe needs at least 2 points"));
    }
    if a.config.task != b.config.task {
        return Err(Error::domain("checkpoints come from different tasks"));
    }
    let task = Task::new(&a.config.task);
    task.check_params(&a.params)?;
    check_dims(a.params.len(), b.params.len())?;
    (0..n_points)
        .map(|i| {
            let t = i as f64 / (n_points - 1) as f64;
            let w = interpolate(&a.params, &b.params, t)?;
            Ok((t, task.eval_loss(&w)))
        })
        .collect()
}
