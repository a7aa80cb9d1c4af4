//! Learning-rate tables for the cooldown shapes next to a cosine baseline.

use cooldown_lab::schedule::{CooldownShape, ScheduleSpec};

fn main() -> cooldown_lab::Result<()> {
    let (peak, n, warmup, decay) = (1e-3, 1000, 100, 200);
    let mut specs = vec![("cosine", ScheduleSpec::cosine(peak, n, warmup))];
    for (name, shape) in [
        ("linear", CooldownShape::Linear),
        ("1-sqrt", CooldownShape::OneMinusSqrt),
        ("cos", CooldownShape::Cosine),
        ("mirror", CooldownShape::MirrorCosine),
        ("1-x^2", CooldownShape::OneMinusSquare),
    ] {
        specs.push((name, ScheduleSpec::constant_cooldown(peak, n, warmup, decay, shape)));
    }

    print!("{:>6}", "step");
    for (name, _) in &specs {
        print!("{name:>10}");
    }
    println!();
    for step in (0..=n).step_by(50) {
        print!("{step:>6}");
        for (_, spec) in &specs {
            print!("{:>10.2e}", spec.lr_at(step)?);
        }
        println!();
    }
    Ok(())
}
