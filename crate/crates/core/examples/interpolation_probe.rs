//! Loss along the straight line from the last pre-cooldown checkpoint to the
//! final one, on the small language model.

use cooldown_lab::schedule::{CooldownShape, ScheduleSpec};
use cooldown_lab::trainer::{interpolation_probe, train, TaskSpec, TrainerConfig};

fn main() -> cooldown_lab::Result<()> {
    let (steps, decay) = (2000, 400);
    let out = train(&TrainerConfig {
        seed: 1,
        task: TaskSpec::synthetic_lm(1),
        schedule: ScheduleSpec::constant_cooldown(1e-2, steps, 100, decay, CooldownShape::OneMinusSqrt),
        eval_every: 200,
        checkpoint_every: steps,
        ..TrainerConfig::default()
    })?;
    let pre = out.checkpoint_at(steps - decay).expect("cooldown start is checkpointed");
    let post = out.checkpoint_at(steps).expect("final step is checkpointed");
    for (t, loss) in interpolation_probe(pre, post, 11)? {
        println!("t {t:.1}  loss {loss:.4}  {}", "#".repeat(((loss - 2.0) * 40.0).max(0.0) as usize));
    }
    Ok(())
}
