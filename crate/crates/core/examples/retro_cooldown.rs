//! One constant-LR trunk, several cooldowns branched from its checkpoints.
//! Each branch costs only its own decay steps.

use cooldown_lab::optim::OptimizerConfig;
use cooldown_lab::schedule::{CooldownShape, ScheduleSpec};
use cooldown_lab::trainer::{resume_with_cooldown, train, TaskSpec, TrainerConfig};

fn main() -> cooldown_lab::Result<()> {
    let trunk = train(&TrainerConfig {
        seed: 3,
        task: TaskSpec::noisy_quadratic(100, 0.05, 1.0, 0.1),
        schedule: ScheduleSpec::constant(1e-2, 6000, 300),
        optimizer: OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        },
        checkpoint_every: 1000,
        ..TrainerConfig::default()
    })?;
    println!("trunk loss at 6000: {:.4e}", trunk.record.final_eval_loss());

    for at in [2000, 4000, 5000] {
        let ckpt = trunk.checkpoint_at(at).expect("checkpoint every 1000 steps");
        for decay in [200, 1000] {
            let branch = resume_with_cooldown(ckpt, decay, CooldownShape::OneMinusSqrt)?;
            println!(
                "branch at {at:>4}, {decay:>4} cooldown steps: {:.4e}",
                branch.record.final_eval_loss()
            );
        }
    }
    Ok(())
}
