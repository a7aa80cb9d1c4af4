//! Learning-rate schedules: cosine, constant, and constant with a terminal
//! cooldown (warmup-stable-decay).
//!
//! All schedules share a linear warmup from 0 to `peak_lr` over
//! `warmup_steps`. Steps are 0-based and `lr_at(n)` is the step size applied
//! by update `n`; the table covers `0..=total_steps`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::util::fmt_decimal;

/// Cooldown multiplier as a function of cooldown progress `x` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CooldownShape {
    /// `1 - x`
    Linear,
    /// `1 - sqrt(x)`
    OneMinusSqrt,
    /// Half-cosine from 1 to 0.
    Cosine,
    /// Reflection of [`CooldownShape::Cosine`] about the linear decay.
    MirrorCosine,
    /// `1 - x^2`
    OneMinusSquare,
    /// `1 - x^a` for `a` in `(0, 1]`.
    Power(f64),
}

impl CooldownShape {
    pub fn multiplier(self, x: f64) -> Result<f64> {
        shape_multiplier(self, x)
    }

    fn violations(self) -> Option<Violation> {
        match self {
            CooldownShape::Power(a) if !(a > 0.0 && a <= 1.0) => Some(Violation::new(
                "power_exponent_out_of_range",
                format!("power cooldown exponent must lie in (0, 1], got {a}"),
            )),
            _ => None,
        }
    }
}

pub fn shape_multiplier(shape: CooldownShape, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!(
            "cooldown progress must lie in [0, 1], got {x}"
        )));
    }
    let cosine = |x: f64| 0.5 * (1.0 + (PI * x).cos());
    Ok(match shape {
        CooldownShape::Linear => 1.0 - x,
        CooldownShape::OneMinusSqrt => 1.0 - x.sqrt(),
        CooldownShape::Cosine => cosine(x),
        CooldownShape::MirrorCosine => 2.0 * (1.0 - x) - cosine(x),
        CooldownShape::OneMinusSquare => 1.0 - x * x,
        // keep a = 0.5 on the exact sqrt path so it agrees bit-for-bit
        CooldownShape::Power(a) if a == 0.5 => 1.0 - x.sqrt(),
        CooldownShape::Power(a) => 1.0 - x.powf(a),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// Half-cosine from `peak_lr` to `final_lr_fraction * peak_lr` over the
    /// post-warmup steps.
    Cosine { final_lr_fraction: f64 },
    /// Constant at `peak_lr` and then `shape` over the last `decay_steps`.
    ConstantCooldown {
        decay_steps: u64,
        shape: CooldownShape,
    },
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScheduleDoc", into = "ScheduleDoc")]
pub struct ScheduleSpec {
    pub peak_lr: f64,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub kind: ScheduleKind,
}

pub const DEFAULT_FINAL_LR_FRACTION: f64 = 0.1;

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::constant_cooldown(1e-3, 5000, 300, 1000, CooldownShape::OneMinusSqrt)
    }
}

impl ScheduleSpec {
    pub fn cosine(peak_lr: f64, total_steps: u64, warmup_steps: u64) -> Self {
        Self {
            peak_lr,
            total_steps,
            warmup_steps,
            kind: ScheduleKind::Cosine {
                final_lr_fraction: DEFAULT_FINAL_LR_FRACTION,
            },
        }
    }

    pub fn constant(peak_lr: f64, total_steps: u64, warmup_steps: u64) -> Self {
        Self {
            peak_lr,
            total_steps,
            warmup_steps,
            kind: ScheduleKind::Constant,
        }
    }

    pub fn constant_cooldown(
        peak_lr: f64,
        total_steps: u64,
        warmup_steps: u64,
        decay_steps: u64,
        shape: CooldownShape,
    ) -> Self {
        Self {
            peak_lr,
            total_steps,
            warmup_steps,
            kind: ScheduleKind::ConstantCooldown { decay_steps, shape },
        }
    }

    /// Constant + cooldown where the cooldown covers `fraction` of all steps.
    pub fn with_cooldown_fraction(
        peak_lr: f64,
        total_steps: u64,
        warmup_steps: u64,
        fraction: f64,
        shape: CooldownShape,
    ) -> Self {
        let decay_steps = (fraction * total_steps as f64).round() as u64;
        Self::constant_cooldown(peak_lr, total_steps, warmup_steps, decay_steps, shape)
    }

    pub fn with_final_lr_fraction(mut self, fraction: f64) -> Self {
        if let ScheduleKind::Cosine { final_lr_fraction } = &mut self.kind {
            *final_lr_fraction = fraction;
        }
        self
    }

    pub fn decay_steps(&self) -> u64 {
        match self.kind {
            ScheduleKind::ConstantCooldown { decay_steps, .. } => decay_steps,
            _ => 0,
        }
    }

    /// First step of the cooldown phase, if the schedule has one.
    pub fn cooldown_start(&self) -> Option<u64> {
        match self.kind {
            ScheduleKind::ConstantCooldown { decay_steps, .. } if decay_steps > 0 => {
                Some(self.total_steps - decay_steps)
            }
            _ => None,
        }
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        lr_at(self, step)
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        validate(self)
    }
}

pub fn validate(spec: &ScheduleSpec) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if !spec.peak_lr.is_finite() {
        out.push(Violation::new("non_finite_peak", "peak_lr must be finite"));
    } else if spec.peak_lr <= 0.0 {
        out.push(Violation::new(
            "non_positive_peak",
            format!("peak_lr must be > 0, got {}", spec.peak_lr),
        ));
    }
    if spec.total_steps == 0 {
        out.push(Violation::new("zero_total", "total_steps must be positive"));
    }
    if spec.warmup_steps >= spec.total_steps {
        out.push(Violation::new(
            "warmup_exceeds_total",
            format!(
                "warmup_steps ({}) must be < total_steps ({})",
                spec.warmup_steps, spec.total_steps
            ),
        ));
    }
    match spec.kind {
        ScheduleKind::Cosine { final_lr_fraction } => {
            if !(0.0..1.0).contains(&final_lr_fraction) {
                out.push(Violation::new(
                    "final_fraction_out_of_range",
                    format!("final_lr_fraction must lie in [0, 1), got {final_lr_fraction}"),
                ));
            }
        }
        ScheduleKind::ConstantCooldown { decay_steps, shape } => {
            let room = spec.total_steps.saturating_sub(spec.warmup_steps);
            if decay_steps > room {
                out.push(Violation::new(
                    "decay_exceeds_remaining",
                    format!(
                        "warmup_steps + decay_steps ({} + {}) exceeds total_steps ({})",
                        spec.warmup_steps, decay_steps, spec.total_steps
                    ),
                ));
            }
            out.extend(shape.violations());
        }
        ScheduleKind::Constant => {}
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn lr_at(spec: &ScheduleSpec, step: u64) -> Result<f64> {
    let total = spec.total_steps;
    if step > total {
        return Err(Error::domain(format!(
            "step {step} is past the end of the schedule ({total})"
        )));
    }
    let peak = spec.peak_lr;
    let warmup = spec.warmup_steps;
    if step < warmup {
        return Ok(step as f64 / warmup as f64 * peak);
    }
    if step == warmup {
        return Ok(peak);
    }
    Ok(match spec.kind {
        ScheduleKind::Constant => peak,
        ScheduleKind::ConstantCooldown { decay_steps, shape } => {
            let start = total - decay_steps;
            if step <= start {
                peak
            } else {
                let x = (step - start) as f64 / decay_steps as f64;
                shape_multiplier(shape, x)? * peak
            }
        }
        ScheduleKind::Cosine { final_lr_fraction } => {
            let floor = final_lr_fraction * peak;
            let t = (step - warmup) as f64 / (total - warmup) as f64;
            floor + 0.5 * (peak - floor) * (1.0 + (PI * t).cos())
        }
    })
}

/// `(step, lr)` pairs at `0, stride, 2*stride, ...` with the final step always
/// included.
pub fn schedule_table(spec: &ScheduleSpec, stride: u64) -> Result<Vec<(u64, f64)>> {
    if stride == 0 {
        return Err(Error::domain("stride must be >= 1"));
    }
    let total = spec.total_steps;
    let mut rows = Vec::with_capacity((total / stride + 2) as usize);
    let mut step = 0;
    while step < total {
        rows.push((step, lr_at(spec, step)?));
        step += stride;
    }
    rows.push((total, lr_at(spec, total)?));
    Ok(rows)
}

pub fn write_schedule_csv<W: Write>(rows: &[(u64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "lr"])?;
    for &(step, lr) in rows {
        w.write_record([step.to_string(), fmt_decimal(lr)])?;
    }
    w.flush()?;
    Ok(())
}

// Flat on-disk form. Keys that do not belong to the tagged kind are rejected.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ScheduleDoc {
    Cosine {
        #[serde(default = "default_peak")]
        peak_lr: f64,
        #[serde(default = "default_total")]
        total_steps: u64,
        #[serde(default = "default_warmup")]
        warmup_steps: u64,
        #[serde(default = "default_final_fraction")]
        final_lr_fraction: f64,
    },
    ConstantCooldown {
        #[serde(default = "default_peak")]
        peak_lr: f64,
        #[serde(default = "default_total")]
        total_steps: u64,
        #[serde(default = "default_warmup")]
        warmup_steps: u64,
        #[serde(default = "default_decay")]
        decay_steps: u64,
        #[serde(default = "default_shape")]
        shape: CooldownShape,
    },
    Constant {
        #[serde(default = "default_peak")]
        peak_lr: f64,
        #[serde(default = "default_total")]
        total_steps: u64,
        #[serde(default = "default_warmup")]
        warmup_steps: u64,
    },
}

fn default_peak() -> f64 {
    1e-3
}
fn default_total() -> u64 {
    5000
}
fn default_warmup() -> u64 {
    300
}
fn default_decay() -> u64 {
    1000
}
fn default_final_fraction() -> f64 {
    DEFAULT_FINAL_LR_FRACTION
}
fn default_shape() -> CooldownShape {
    CooldownShape::OneMinusSqrt
}

impl From<ScheduleDoc> for ScheduleSpec {
    fn from(doc: ScheduleDoc) -> Self {
        match doc {
            ScheduleDoc::Cosine {
                peak_lr,
                total_steps,
                warmup_steps,
                final_lr_fraction,
            } => ScheduleSpec::cosine(peak_lr, total_steps, warmup_steps)
                .with_final_lr_fraction(final_lr_fraction),
            ScheduleDoc::ConstantCooldown {
                peak_lr,
                total_steps,
                warmup_steps,
                decay_steps,
                shape,
            } => ScheduleSpec::constant_cooldown(
                peak_lr,
                total_steps,
                warmup_steps,
                decay_steps,
                shape,
            ),
            ScheduleDoc::Constant {
                peak_lr,
                total_steps,
                warmup_steps,
            } => ScheduleSpec::constant(peak_lr, total_steps, warmup_steps),
        }
    }
}

impl From<ScheduleSpec> for ScheduleDoc {
    fn from(s: ScheduleSpec) -> Self {
        match s.kind {
            ScheduleKind::Cosine { final_lr_fraction } => ScheduleDoc::Cosine {
                peak_lr: s.peak_lr,
                total_steps: s.total_steps,
                warmup_steps: s.warmup_steps,
                final_lr_fraction,
            },
            ScheduleKind::ConstantCooldown { decay_steps, shape } => {
                ScheduleDoc::ConstantCooldown {
                    peak_lr: s.peak_lr,
                    total_steps: s.total_steps,
                    warmup_steps: s.warmup_steps,
                    decay_steps,
                    shape,
                }
            }
            ScheduleKind::Constant => ScheduleDoc::Constant {
                peak_lr: s.peak_lr,
                total_steps: s.total_steps,
                warmup_steps: s.warmup_steps,
            },
        }
    }
}
