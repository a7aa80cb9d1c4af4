//! FLOPs of a small GPT-style model and the cost of a scaling suite under the
//! three training strategies.

use cooldown_lab::compute::{flops_per_sequence, plan_suite, savings, ModelConfig, Strategy, Throughput};

fn model(name: &str, d: u64, layers: u64, params: u64) -> ModelConfig {
    ModelConfig {
        name: name.into(),
        d_model: d,
        n_layers: layers,
        ffw_size: 8 * d / 3,
        key_size: 64,
        n_heads: d / 64,
        vocab_size: 50304,
        seq_len: 1024,
        swiglu: true,
        param_count: params,
    }
}

fn main() -> cooldown_lab::Result<()> {
    let models = [
        model("33M", 384, 8, 33_000_000),
        model("124M", 768, 12, 124_000_000),
        model("360M", 1024, 24, 360_000_000),
    ];
    for m in &models {
        let f = flops_per_sequence(m)?;
        println!(
            "{:>5}: {:.3e} FLOPs per sequence ({} untied params)",
            m.name,
            f.total as f64,
            m.untied_param_count()
        );
    }

    let ratios = [10.0, 20.0, 30.0, 40.0];
    let cosine = plan_suite(&models, &ratios, Strategy::CosinePerLength)?;
    let tp = Some(Throughput {
        flops_per_sec: 312e12,
        utilization: 0.4,
    });
    for alt in [
        Strategy::ConstantPlusCooldown { cooldown_fraction: 0.2 },
        Strategy::ConstantPlusSwa,
    ] {
        let plan = plan_suite(&models, &ratios, alt)?;
        let s = savings(&cosine, &plan, tp)?;
        let hours = s.gpu_hours.expect("throughput given");
        println!(
            "{:<24} {:.3} of the cosine suite ({:.0} vs {:.0} GPU hours)",
            alt.label(),
            s.ratio,
            hours.alternative,
            hours.baseline
        );
    }
    Ok(())
}
