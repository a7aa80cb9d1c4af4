//! AdamW with decoupled weight decay, global-norm clipping, and a
//! schedule-free AdamW variant used for comparison runs.
//!
//! ```text
//! m_t   = b1 m + (1 - b1) g
//! v_t   = b2 v + (1 - b2) g^2
//! m_hat = m_t / (1 - b1^t)      v_hat = v_t / (1 - b2^t)
//! w    -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Result, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_max: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            clip_max: Some(1.0),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(Violation::new(
                    "beta_out_of_range",
                    format!("{name} must lie in [0, 1), got {b}"),
                ));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            out.push(Violation::new("non_positive_eps", "eps must be > 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(Violation::new(
                "negative_weight_decay",
                "weight_decay must be >= 0",
            ));
        }
        if let Some(c) = self.clip_max {
            if !(c > 0.0) {
                out.push(Violation::new("non_positive_clip", "clip_max must be > 0"));
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

pub fn global_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so its L2 norm is at most `clip_max`. Returns the
/// norm before clipping.
pub fn clip_global_norm_in_place(grads: &mut [f64], clip_max: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_max {
        let scale = clip_max / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
        // rounding can leave the norm an ulp or two above the bound
        while global_norm(grads) > clip_max {
            grads.iter_mut().for_each(|g| *g *= 1.0 - f64::EPSILON);
        }
    }
    norm
}

pub fn clip_global_norm(grads: &[f64], clip_max: f64) -> Vec<f64> {
    let mut out = grads.to_vec();
    clip_global_norm_in_place(&mut out, clip_max);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// One AdamW update. `grads` should already be clipped.
pub fn adamw_step(
    state: &mut OptimizerState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    check_dims(params.len(), grads.len())?;
    check_dims(params.len(), state.m.len())?;
    check_dims(params.len(), state.v.len())?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((w, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *w);
    }
    Ok(())
}

/// Plain gradient descent, `w -= lr * g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check_dims(params.len(), grads.len())?;
    for (w, g) in params.iter_mut().zip(grads) {
        *w -= lr * g;
    }
    Ok(())
}

/// Schedule-free AdamW state.
///
/// `z` is the base iterate driven by preconditioned gradient steps, `x` the
/// uniform running average of the `z` sequence, and gradients are taken at
/// `y = (1 - interp) z + interp x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfoState {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    /// Second-moment estimate used to precondition `z`.
    pub v: Vec<f64>,
    pub step: u64,
    pub interp: f64,
}

impl SfoState {
    pub fn new(init: Vec<f64>, interp: f64) -> Self {
        let dim = init.len();
        Self {
            z: init.clone(),
            x: init,
            v: vec![0.0; dim],
            step: 0,
            interp,
        }
    }

    /// Point at which the next gradient is evaluated.
    pub fn eval_point(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.z.len()];
        self.eval_point_into(&mut y);
        y
    }

    pub fn eval_point_into(&self, y: &mut [f64]) {
        let b = self.interp;
        for ((yi, &z), &x) in y.iter_mut().zip(&self.z).zip(&self.x) {
            *yi = (1.0 - b) * z + b * x;
        }
    }

    /// Applies a gradient already evaluated at [`SfoState::eval_point`].
    pub fn apply(&mut self, grads: &[f64], lr: f64, cfg: &OptimizerConfig) -> Result<()> {
        check_dims(self.z.len(), grads.len())?;
        check_dims(self.z.len(), self.x.len())?;
        check_dims(self.z.len(), self.v.len())?;
        self.step += 1;
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let c = 1.0 / self.step as f64;
        for (((z, x), v), &g) in self
            .z
            .iter_mut()
            .zip(self.x.iter_mut())
            .zip(self.v.iter_mut())
            .zip(grads)
        {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let v_hat = *v / bc2;
            *z -= lr * (g / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *z);
            *x = (1.0 - c) * *x + c * *z;
        }
        Ok(())
    }
}

/// Full schedule-free step: evaluate the gradient oracle at `y`, clip, update.
pub fn sfo_step<F>(state: &mut SfoState, mut grad_at: F, lr: f64, cfg: &OptimizerConfig) -> Result<()>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let y = state.eval_point();
    let mut g = grad_at(&y);
    check_dims(y.len(), g.len())?;
    if let Some(c) = cfg.clip_max {
        clip_global_norm_in_place(&mut g, c);
    }
    state.apply(&g, lr, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn no_decay() -> OptimizerConfig {
        OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn clip_examples() {
        let c = clip_global_norm(&[3.0, 4.0], 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_global_norm(&[0.1, 0.0], 1.0), vec![0.1, 0.0]);
        assert_eq!(clip_global_norm(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn stationary_without_gradient_or_decay() {
        let mut s = OptimizerState::new(3);
        let mut w = vec![1.0, -2.0, 3.5];
        for _ in 0..10 {
            adamw_step(&mut s, &mut w, &[0.0; 3], 1e-3, &no_decay()).unwrap();
        }
        assert_eq!(w, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step, 10);
    }

    #[test]
    fn first_step_is_sign_step() {
        let mut s = OptimizerState::new(1);
        let mut w = vec![0.0];
        adamw_step(&mut s, &mut w, &[2.0], 1e-3, &no_decay()).unwrap();
        // m_hat = 2, v_hat = 4, so the step is lr * 2 / (2 + eps)
        let expected = -1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-18);
        assert!((w[0] + 1e-3).abs() < 1e-11);
    }

    #[test]
    fn decay_only_step() {
        let mut s = OptimizerState::new(1);
        let mut w = vec![1.0];
        let cfg = OptimizerConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        adamw_step(&mut s, &mut w, &[0.0], 1e-3, &cfg).unwrap();
        assert!((w[0] - 0.9999).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let mut s = OptimizerState::new(2);
        let mut w = vec![0.0; 2];
        assert!(matches!(
            adamw_step(&mut s, &mut w, &[1.0], 1e-3, &no_decay()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bias_correction_recovers_constant_gradient() {
        let mut s = OptimizerState::new(2);
        let mut w = vec![0.0; 2];
        let g = [0.3, -1.7];
        for k in 1..=50u64 {
            adamw_step(&mut s, &mut w, &g, 1e-3, &no_decay()).unwrap();
            let bc1 = 1.0 - 0.9f64.powi(k as i32);
            for i in 0..2 {
                assert!((s.m[i] / bc1 - g[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            beta1: 1.0,
            weight_decay: -1.0,
            clip_max: Some(0.0),
            ..Default::default()
        };
        let codes: Vec<_> = bad.validate().unwrap_err().iter().map(|v| v.code).collect();
        assert_eq!(
            codes,
            vec!["beta_out_of_range", "negative_weight_decay", "non_positive_clip"]
        );
    }

    #[test]
    fn sfo_first_step_replaces_average() {
        let mut s = SfoState::new(vec![1.0, 2.0], 0.9);
        sfo_step(&mut s, |y| y.iter().map(|v| 2.0 * v).collect(), 0.1, &no_decay()).unwrap();
        assert_eq!(s.x, s.z);
        assert_ne!(s.z, vec![1.0, 2.0]);
    }

    #[test]
    fn sfo_zero_gradient_is_stationary() {
        let mut s = SfoState::new(vec![1.0, -1.0], 0.5);
        for _ in 0..20 {
            sfo_step(&mut s, |y| vec![0.0; y.len()], 0.1, &no_decay()).unwrap();
        }
        assert_eq!(s.z, vec![1.0, -1.0]);
        assert_eq!(s.x, vec![1.0, -1.0]);
    }

    #[test]
    fn sfo_interp_one_evaluates_at_average() {
        let mut s = SfoState::new(vec![0.0; 3], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x_before = s.x.clone();
            sfo_step(
                &mut s,
                |y| {
                    assert_eq!(y, x_before.as_slice());
                    (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()
                },
                0.01,
                &no_decay(),
            )
            .unwrap();
        }
    }

    #[test]
    fn sfo_average_is_uniform_mean_of_iterates() {
        let mut s = SfoState::new(vec![0.5; 4], 0.0);
        let mut zs = vec![];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..25 {
            let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.apply(&g, 0.05, &no_decay()).unwrap();
            zs.push(s.z.clone());
        }
        for i in 0..4 {
            let mean = zs.iter().map(|z| z[i]).sum::<f64>() / zs.len() as f64;
            assert!((s.x[i] - mean).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded(g in proptest::collection::vec(-1e6f64..1e6, 0..50), c in 1e-6f64..10.0) {
            let out = clip_global_norm(&g, c);
            prop_assert!(global_norm(&out) <= c + 1e-12);
        }

        #[test]
        fn single_coordinate_moves_alone(dim in 2usize..20, idx in 0usize..20, g in -10.0f64..10.0) {
            prop_assume!(g != 0.0);
            let idx = idx % dim;
            let mut s = OptimizerState::new(dim);
            let mut w: Vec<f64> = (0..dim).map(|i| i as f64 * 0.1).collect();
            let before = w.clone();
            let mut grads = vec![0.0; dim];
            grads[idx] = g;
            adamw_step(&mut s, &mut w, &grads, 1e-2, &no_decay()).unwrap();
            for i in 0..dim {
                if i == idx {
                    prop_assert_ne!(w[i], before[i]);
                } else {
                    prop_assert_eq!(w[i], before[i]);
                }
            }
        }
    }
}
