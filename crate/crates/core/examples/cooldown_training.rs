//! Trains the noisy quadratic with cosine and with constant LR plus a 20%
//! (1-sqrt) cooldown, then prints the eval-loss curves side by side.

use cooldown_lab::optim::OptimizerConfig;
use cooldown_lab::schedule::{CooldownShape, ScheduleSpec};
use cooldown_lab::trainer::{train, TaskSpec, TrainerConfig};

fn config(schedule: ScheduleSpec) -> TrainerConfig {
    TrainerConfig {
        seed: 0,
        task: TaskSpec::noisy_quadratic(100, 0.05, 1.0, 0.1),
        schedule,
        optimizer: OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        },
        eval_every: 250,
        ..TrainerConfig::default()
    }
}

fn main() -> cooldown_lab::Result<()> {
    let cosine = train(&config(ScheduleSpec::cosine(2e-3, 5000, 300)))?;
    let cooldown = train(&config(ScheduleSpec::constant_cooldown(
        1.5e-3,
        5000,
        300,
        1000,
        CooldownShape::OneMinusSqrt,
    )))?;
    println!("{:>6} {:>12} {:>12}", "step", "cosine", "cooldown");
    for (a, b) in cosine.record.rows.iter().zip(&cooldown.record.rows) {
        println!("{:>6} {:>12.4e} {:>12.4e}", a.step, a.eval_loss, b.eval_loss);
    }
    Ok(())
}
