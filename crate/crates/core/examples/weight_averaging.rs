//! Windowed SWA along a constant-LR run, LAWA over its saved windows, and the
//! loss reached by an explicit cooldown for comparison.

use cooldown_lab::averaging::lawa_average;
use cooldown_lab::optim::OptimizerConfig;
use cooldown_lab::schedule::{CooldownShape, ScheduleSpec};
use cooldown_lab::trainer::{evaluate, train, Checkpoint, SwaConfig, TaskSpec, TrainerConfig};

fn main() -> cooldown_lab::Result<()> {
    let base = TrainerConfig {
        seed: 7,
        task: TaskSpec::noisy_quadratic(100, 0.05, 1.0, 0.1),
        schedule: ScheduleSpec::constant(1e-2, 5000, 300),
        optimizer: OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        },
        eval_every: 500,
        swa: Some(SwaConfig::new(100)),
        ..TrainerConfig::default()
    };
    let out = train(&base)?;
    for r in &out.record.rows {
        let swa = r.swa_eval_loss.map_or("-".to_string(), |l| format!("{l:.4e}"));
        println!("{:>5} raw {:.4e} swa {swa}", r.step, r.eval_loss);
    }

    let windows: Vec<&Checkpoint> = out.swa_windows().collect();
    let means: Vec<&[f64]> = windows.iter().map(|c| c.params.as_slice()).collect();
    let last = windows.last().expect("run longer than one window");
    for j in [1, 5, 20] {
        let lawa = Checkpoint {
            params: lawa_average(&means, j)?,
            ..(*last).clone()
        };
        println!("LAWA over last {j:>2} windows: {:.4e}", evaluate(&lawa)?);
    }

    let cooled = train(&TrainerConfig {
        schedule: ScheduleSpec::constant_cooldown(1e-2, 5000, 300, 1000, CooldownShape::OneMinusSqrt),
        swa: None,
        ..base
    })?;
    println!("explicit cooldown: {:.4e}", cooled.record.final_eval_loss());
    Ok(())
}
