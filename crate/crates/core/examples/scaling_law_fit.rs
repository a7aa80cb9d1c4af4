//! Fits L(N, D) = A/N^alpha + B/D^beta + E to noisy synthetic measurements.

use cooldown_lab::lawfit::{fit, DataPoint, FitOptions, LawParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> cooldown_lab::Result<()> {
    let truth = LawParams {
        a: 406.4,
        alpha: 0.34,
        b: 410.7,
        beta: 0.28,
        e: 1.69,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut points = Vec::new();
    for n in [3e7, 6e7, 1.2e8, 2.5e8, 5e8] {
        for ratio in [5.0, 10.0, 20.0, 40.0] {
            let d = ratio * n;
            let noise: f64 = rng.sample(StandardNormal);
            points.push(DataPoint::new(n, d, truth.predict(n, d)? * (0.01 * noise).exp()));
        }
    }
    let report = fit(&points, &FitOptions::default())?;
    let p = report.params;
    println!("form {:?}, objective {:.3e}", report.form, report.objective);
    println!("A {:.1} alpha {:.3} B {:.1} beta {:.3} E {:.3}", p.a, p.alpha, p.b, p.beta, p.e);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    let (n, d) = (1e9, 2e10);
    println!(
        "at N=1e9, D=2e10: predicted {:.4}, true {:.4}",
        p.predict(n, d)?,
        truth.predict(n, d)?
    );
    Ok(())
}
