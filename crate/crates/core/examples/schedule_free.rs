//! Schedule-free AdamW at two momentum settings against a constant LR plus
//! cooldown run on the noisy quadratic.

use cooldown_lab::optim::OptimizerConfig;
use cooldown_lab::schedule::{CooldownShape, ScheduleSpec};
use cooldown_lab::trainer::{train, Method, TaskSpec, TrainerConfig};
use rayon::prelude::*;

fn run(method: Method, schedule: ScheduleSpec, betas: (f64, f64)) -> f64 {
    let losses: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = TrainerConfig {
                seed,
                task: TaskSpec::noisy_quadratic(100, 0.05, 1.0, 0.1),
                schedule,
                method,
                optimizer: OptimizerConfig {
                    beta1: betas.0,
                    beta2: betas.1,
                    weight_decay: 0.0,
                    ..OptimizerConfig::default()
                },
                eval_every: 1000,
                ..TrainerConfig::default()
            };
            train(&cfg).expect("valid config").record.final_eval_loss()
        })
        .collect();
    losses.iter().sum::<f64>() / losses.len() as f64
}

fn main() {
    for lr in [3e-3, 1e-2, 3e-2] {
        let flat = ScheduleSpec::constant(lr, 5000, 300);
        println!(
            "lr {lr:.0e}: sfo(0.9, 0.95) {:.3e}  sfo(0.95, 0.99) {:.3e}",
            run(Method::ScheduleFree, flat, (0.9, 0.95)),
            run(Method::ScheduleFree, flat, (0.95, 0.99)),
        );
    }
    let cd = ScheduleSpec::constant_cooldown(1.5e-3, 5000, 300, 1000, CooldownShape::OneMinusSqrt);
    println!("adamw + cooldown at 1.5e-3: {:.3e}", run(Method::Adamw, cd, (0.9, 0.95)));
}
