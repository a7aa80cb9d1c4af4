//! Weight averaging: fixed-window SWA, LAWA over saved window means, EMA, and
//! straight-line interpolation between two weight vectors.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

/// Windowed stochastic weight averaging.
///
/// Holds a single running-mean accumulator. Every `window` samples the mean is
/// pushed onto `completed` and the accumulator restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwaState {
    pub window: u64,
    pub count: u64,
    pub mean: Vec<f64>,
    /// `(end_step, window mean)`, append-only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub completed: Vec<(u64, Vec<f64>)>,
}

impl SwaState {
    pub fn new(window: u64, dim: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::domain("SWA window must be >= 1"));
        }
        Ok(Self {
            window,
            count: 0,
            mean: vec![0.0; dim],
            completed: Vec::new(),
        })
    }

    /// Adds a snapshot taken at `step`. Returns the window mean if this sample
    /// closed a window.
    pub fn update(&mut self, step: u64, weights: &[f64]) -> Result<Option<&[f64]>> {
        check_dims(self.mean.len(), weights.len())?;
        let k = (self.count + 1) as f64;
        for (m, &w) in self.mean.iter_mut().zip(weights) {
            *m += (w - *m) / k;
        }
        self.count += 1;
        if self.count == self.window {
            let done = std::mem::replace(&mut self.mean, vec![0.0; weights.len()]);
            self.completed.push((step, done));
            self.count = 0;
            return Ok(self.completed.last().map(|(_, m)| m.as_slice()));
        }
        Ok(None)
    }

    pub fn latest(&self) -> Option<&[f64]> {
        self.completed.last().map(|(_, m)| m.as_slice())
    }

    pub fn window_means(&self) -> Vec<&[f64]> {
        self.completed.iter().map(|(_, m)| m.as_slice()).collect()
    }
}

pub fn swa_update(state: &mut SwaState, step: u64, weights: &[f64]) -> Result<()> {
    state.update(step, weights).map(|_| ())
}

/// Mean of the last `j` window means.
pub fn lawa_average<V: AsRef<[f64]>>(window_means: &[V], j: usize) -> Result<Vec<f64>> {
    if j == 0 || j > window_means.len() {
        return Err(Error::domain(format!(
            "LAWA needs 1 <= j <= {} window means, got j = {j}",
            window_means.len()
        )));
    }
    let tail = &window_means[window_means.len() - j..];
    let dim = tail[0].as_ref().len();
    let mut out = vec![0.0; dim];
    for m in tail {
        let m = m.as_ref();
        check_dims(dim, m.len())?;
        for (o, &x) in out.iter_mut().zip(m) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= j as f64);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub decay: f64,
    pub value: Vec<f64>,
}

impl EmaState {
    pub fn new(decay: f64, init: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::domain(format!("EMA decay must lie in [0, 1], got {decay}")));
        }
        Ok(Self { decay, value: init })
    }

    /// Decay matched to an SWA window of `h` steps.
    pub fn for_window(h: u64, init: Vec<f64>) -> Result<Self> {
        if h == 0 {
            return Err(Error::domain("EMA horizon must be >= 1"));
        }
        Self::new(1.0 / h as f64, init)
    }
}

pub fn ema_update(state: &mut EmaState, weights: &[f64]) -> Result<()> {
    check_dims(state.value.len(), weights.len())?;
    let g = state.decay;
    for (v, &w) in state.value.iter_mut().zip(weights) {
        *v = (1.0 - g) * *v + g * w;
    }
    Ok(())
}

/// `(1 - t) * w0 + t * w1`
pub fn interpolate(w0: &[f64], w1: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dims(w0.len(), w1.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("interpolation weight must lie in [0, 1], got {t}")));
    }
    Ok(w0
        .iter()
        .zip(w1)
        .map(|(&a, &b)| (1.0 - t) * a + t * b)
        .collect())
}
