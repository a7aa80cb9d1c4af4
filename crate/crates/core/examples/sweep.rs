//! A small grid sweep written to a temporary directory. The summary CSV is
//! identical whatever the concurrency.

use cooldown_lab::cli::config::parse_document;
use cooldown_lab::cli::sweep::{expand, run_sweep, write_summary, GridAxis};

fn main() -> cooldown_lab::Result<()> {
    let base = parse_document(
        r#"{"seed": 1,
            "task": {"kind": "noisy_quadratic", "dim": 50},
            "schedule": {"kind": "constant_cooldown", "total_steps": 2000, "warmup_steps": 100,
                         "decay_steps": 400, "shape": "one_minus_sqrt"},
            "eval_every": 500}"#,
    )?;
    let axes: Vec<GridAxis> = vec![
        "schedule.peak_lr=0.003,0.01,0.03".parse()?,
        "schedule.shape=linear,one_minus_sqrt".parse()?,
    ];
    let runs = expand(&base, &axes, 2, "demo")?;
    let dir = std::env::temp_dir().join(format!("cooldown-lab-sweep-{}", std::process::id()));
    let results = run_sweep(&runs, &dir, 4, true)?;
    write_summary(&axes, &results, std::io::stdout().lock())?;
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
