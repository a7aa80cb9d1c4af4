//! Transformer FLOPs accounting and scaling-suite cost planning.
//!
//! Forward FLOPs count every matrix multiply (embedding lookup included) at
//! two FLOPs per multiply-accumulate, plus three FLOPs per softmax entry. The
//! backward pass is charged at twice the forward pass.
//!
//! A scaling suite trains every model at several token budgets
//! `D_i = ratio_i * N`. Three strategies are costed:
//!
//! * `CosinePerLength`: one full run per budget.
//! * `ConstantPlusCooldown`: one constant-LR trunk up to
//!   `(1 - frac) * max D_i`; each budget branches a cooldown of `frac * D_i`
//!   from the trunk checkpoint at `(1 - frac) * D_i`.
//! * `ConstantPlusSwa`: one run up to `max D_i`, evaluated through weight
//!   averages along the way.
//!
//! Warmup is identical across strategies and not charged separately.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::fmt_decimal;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: String,
    pub d_model: u64,
    pub n_layers: u64,
    pub ffw_size: u64,
    pub key_size: u64,
    pub n_heads: u64,
    pub vocab_size: u64,
    pub seq_len: u64,
    #[serde(default = "yes")]
    pub swiglu: bool,
    /// Parameter count `N` used for token ratios `D / N`.
    pub param_count: u64,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("ffw_size", self.ffw_size),
            ("key_size", self.key_size),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
            ("param_count", self.param_count),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::domain(format!(
                    "model `{}`: {name} must be >= 1",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Parameters touched by the counted matmuls, with an untied output head:
    /// embedding, attention projections, MLP, two norms per layer, final norm
    /// and head.
    pub fn untied_param_count(&self) -> u64 {
        let kh = self.key_size * self.n_heads;
        let mlp_mats = if self.swiglu { 3 } else { 2 };
        let per_layer = 4 * self.d_model * kh
            + mlp_mats * self.d_model * self.ffw_size
            + 2 * self.d_model;
        2 * self.vocab_size * self.d_model + self.n_layers * per_layer + self.d_model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub embedding: u128,
    /// Per layer.
    pub attention: u128,
    /// Per layer.
    pub dense: u128,
    pub final_logits: u128,
    pub single_forward: u128,
    pub total: u128,
}

struct Checked(u128);

impl Checked {
    fn of(v: u64) -> Self {
        Checked(v as u128)
    }
    fn mul(self, v: u64, what: &'static str) -> Result<Self> {
        self.0
            .checked_mul(v as u128)
            .map(Checked)
            .ok_or(Error::Overflow(what))
    }
}

fn add(parts: &[u128], what: &'static str) -> Result<u128> {
    parts
        .iter()
        .try_fold(0u128, |acc, &p| acc.checked_add(p))
        .ok_or(Error::Overflow(what))
}

pub fn flops_per_sequence(cfg: &ModelConfig) -> Result<FlopsBreakdown> {
    cfg.validate()?;
    let seq = cfg.seq_len;
    let d = cfg.d_model;
    let kh = cfg
        .key_size
        .checked_mul(cfg.n_heads)
        .ok_or(Error::Overflow("attention width"))?;

    let embedding = Checked::of(2)
        .mul(seq, "embedding")?
        .mul(cfg.vocab_size, "embedding")?
        .mul(d, "embedding")?
        .0;

    let projections = Checked::of(6).mul(seq, "attention")?.mul(d, "attention")?.mul(kh, "attention")?.0;
    let logits = Checked::of(2).mul(seq, "attention")?.mul(seq, "attention")?.mul(kh, "attention")?.0;
    let softmax = Checked::of(3)
        .mul(cfg.n_heads, "attention")?
        .mul(seq, "attention")?
        .mul(seq, "attention")?
        .0;
    let reduction = logits;
    let out_proj = Checked::of(2).mul(seq, "attention")?.mul(kh, "attention")?.mul(d, "attention")?.0;
    let attention = add(&[projections, logits, softmax, reduction, out_proj], "attention")?;

    let mats = if cfg.swiglu { 3 } else { 2 };
    let dense = Checked::of(2)
        .mul(seq, "dense")?
        .mul(mats, "dense")?
        .mul(d, "dense")?
        .mul(cfg.ffw_size, "dense")?
        .0;

    let final_logits = Checked::of(2)
        .mul(seq, "final logits")?
        .mul(d, "final logits")?
        .mul(cfg.vocab_size, "final logits")?
        .0;

    let per_layer = add(&[attention, dense], "layer")?;
    let layers = per_layer
        .checked_mul(cfg.n_layers as u128)
        .ok_or(Error::Overflow("layers"))?;
    let single_forward = add(&[embedding, layers, final_logits], "forward pass")?;
    let total = single_forward
        .checked_mul(3)
        .ok_or(Error::Overflow("forward + backward"))?;

    Ok(FlopsBreakdown {
        embedding,
        attention,
        dense,
        final_logits,
        single_forward,
        total,
    })
}

/// Training FLOPs per token (forward + backward).
pub fn flops_per_token(cfg: &ModelConfig) -> Result<f64> {
    Ok(flops_per_sequence(cfg)?.total as f64 / cfg.seq_len as f64)
}

pub fn flops_for_tokens(cfg: &ModelConfig, tokens: u64) -> Result<f64> {
    if tokens == 0 {
        return Err(Error::domain("token count must be >= 1"));
    }
    Ok(flops_per_token(cfg)? * tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    CosinePerLength,
    ConstantPlusCooldown { cooldown_fraction: f64 },
    ConstantPlusSwa,
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::CosinePerLength => "cosine",
            Strategy::ConstantPlusCooldown { .. } => "cooldown",
            Strategy::ConstantPlusSwa => "swa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCost {
    /// `"full"`, `"trunk"` or `"cooldown"`.
    pub role: String,
    pub tokens: f64,
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPlan {
    pub model: String,
    pub param_count: u64,
    pub targets: Vec<f64>,
    pub runs: Vec<RunCost>,
    pub tokens: f64,
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuitePlan {
    pub strategy: Strategy,
    pub ratios: Vec<f64>,
    pub models: Vec<ModelPlan>,
    pub total_flops: f64,
}

pub fn plan_suite(models: &[ModelConfig], ratios: &[f64], strategy: Strategy) -> Result<SuitePlan> {
    if models.is_empty() {
        return Err(Error::domain("model list is empty"));
    }
    if ratios.is_empty() {
        return Err(Error::domain("ratio list is empty"));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::domain("token ratios must be finite and positive"));
    }
    if ratios.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("token ratios must be strictly increasing"));
    }
    if let Strategy::ConstantPlusCooldown { cooldown_fraction } = strategy {
        if !(cooldown_fraction > 0.0 && cooldown_fraction < 1.0) {
            return Err(Error::domain(format!(
                "cooldown fraction must lie in (0, 1), got {cooldown_fraction}"
            )));
        }
    }

    let mut plans = Vec::with_capacity(models.len());
    for cfg in models {
        let per_token = flops_per_token(cfg)?;
        let n = cfg.param_count as f64;
        let targets: Vec<f64> = ratios.iter().map(|r| r * n).collect();
        let longest = *targets.last().expect("non-empty");
        let run = |role: &str, tokens: f64| RunCost {
            role: role.to_string(),
            tokens,
            flops: per_token * tokens,
        };
        let runs: Vec<RunCost> = match strategy {
            Strategy::CosinePerLength => targets.iter().map(|&d| run("full", d)).collect(),
            Strategy::ConstantPlusCooldown { cooldown_fraction } => {
                std::iter::once(run("trunk", (1.0 - cooldown_fraction) * longest))
                    .chain(targets.iter().map(|&d| run("cooldown", cooldown_fraction * d)))
                    .collect()
            }
            Strategy::ConstantPlusSwa => vec![run("full", longest)],
        };
        let tokens = runs.iter().map(|r| r.tokens).sum();
        let flops = runs.iter().map(|r| r.flops).sum();
        plans.push(ModelPlan {
            model: cfg.name.clone(),
            param_count: cfg.param_count,
            targets,
            runs,
            tokens,
            flops,
        });
    }
    let total_flops = plans.iter().map(|p| p.flops).sum();
    Ok(SuitePlan {
        strategy,
        ratios: ratios.to_vec(),
        models: plans,
        total_flops,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    /// Peak FLOPs per second of one GPU.
    pub flops_per_sec: f64,
    /// Achieved fraction of peak (model FLOPs utilisation).
    pub utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpuHours {
    pub baseline: f64,
    pub alternative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub baseline: Strategy,
    pub alternative: Strategy,
    pub baseline_flops: f64,
    pub alternative_flops: f64,
    pub ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpu_hours: Option<GpuHours>,
}

pub fn savings(
    baseline: &SuitePlan,
    alternative: &SuitePlan,
    throughput: Option<Throughput>,
) -> Result<SavingsReport> {
    let same_models = baseline.models.len() == alternative.models.len()
        && baseline
            .models
            .iter()
            .zip(&alternative.models)
            .all(|(a, b)| a.model == b.model && a.param_count == b.param_count);
    if !same_models || baseline.ratios != alternative.ratios {
        return Err(Error::domain(
            "plans must cover identical model lists and token ratios",
        ));
    }
    if baseline.total_flops <= 0.0 {
        return Err(Error::domain("baseline plan has no cost"));
    }
    let gpu_hours = match throughput {
        Some(t) => {
            if !(t.flops_per_sec > 0.0 && t.utilization > 0.0 && t.utilization <= 1.0) {
                return Err(Error::domain(
                    "throughput must be positive and utilization in (0, 1]",
                ));
            }
            let hours = |f: f64| f / (t.flops_per_sec * t.utilization) / 3600.0;
            Some(GpuHours {
                baseline: hours(baseline.total_flops),
                alternative: hours(alternative.total_flops),
            })
        }
        None => None,
    };
    Ok(SavingsReport {
        baseline: baseline.strategy,
        alternative: alternative.strategy,
        baseline_flops: baseline.total_flops,
        alternative_flops: alternative.total_flops,
        ratio: alternative.total_flops / baseline.total_flops,
        gpu_hours,
    })
}

/// `model,strategy,tokens,flops`, one row per training run.
pub fn write_plan_csv<W: Write>(plans: &[&SuitePlan], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "strategy", "tokens", "flops"])?;
    for plan in plans {
        for m in &plan.models {
            for run in &m.runs {
                let strategy = format!("{}:{}", plan.strategy.label(), run.role);
                w.write_record([
                    m.model.as_str(),
                    strategy.as_str(),
                    &fmt_decimal(run.tokens),
                    &fmt_decimal(run.flops),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
