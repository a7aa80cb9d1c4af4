//! Desk-scale training tasks.
//!
//! `NoisyQuadratic` is `L(w) = 1/2 w^T H w` with a diagonal, log-spaced `H`
//! and additive Gaussian gradient noise; its expected dynamics under plain
//! gradient descent are available in closed form. `SyntheticLm` is a small
//! next-token model (embedding, one tanh layer, softmax) trained on a seeded
//! order-2 Markov corpus with hand-written backpropagation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Violation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    NoisyQuadratic {
        #[serde(default = "d_dim")]
        dim: usize,
        #[serde(default = "d_eigen_min")]
        eigen_min: f64,
        #[serde(default = "d_eigen_max")]
        eigen_max: f64,
        #[serde(default = "d_noise")]
        noise_scale: f64,
    },
    SyntheticLm {
        #[serde(default = "d_vocab")]
        vocab: usize,
        #[serde(default = "d_context")]
        context: usize,
        #[serde(default = "d_embed")]
        embed: usize,
        #[serde(default = "d_hidden")]
        hidden: usize,
        #[serde(default)]
        corpus_seed: u64,
        #[serde(default = "d_corpus_len")]
        corpus_len: usize,
        /// Number of held-out positions used for evaluation.
        #[serde(default = "d_eval_positions")]
        eval_positions: usize,
    },
}

fn d_dim() -> usize {
    100
}
fn d_eigen_min() -> f64 {
    0.05
}
fn d_eigen_max() -> f64 {
    1.0
}
fn d_noise() -> f64 {
    0.1
}
fn d_vocab() -> usize {
    64
}
fn d_context() -> usize {
    8
}
fn d_embed() -> usize {
    8
}
fn d_hidden() -> usize {
    64
}
fn d_corpus_len() -> usize {
    40_000
}
fn d_eval_positions() -> usize {
    2048
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self::noisy_quadratic(d_dim(), d_eigen_min(), d_eigen_max(), d_noise())
    }
}

impl TaskSpec {
    pub fn noisy_quadratic(dim: usize, eigen_min: f64, eigen_max: f64, noise_scale: f64) -> Self {
        TaskSpec::NoisyQuadratic {
            dim,
            eigen_min,
            eigen_max,
            noise_scale,
        }
    }

    pub fn synthetic_lm(corpus_seed: u64) -> Self {
        TaskSpec::SyntheticLm {
            vocab: d_vocab(),
            context: d_context(),
            embed: d_embed(),
            hidden: d_hidden(),
            corpus_seed,
            corpus_len: d_corpus_len(),
            eval_positions: d_eval_positions(),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, TaskSpec::NoisyQuadratic { .. })
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        match *self {
            TaskSpec::NoisyQuadratic {
                dim,
                eigen_min,
                eigen_max,
                noise_scale,
            } => {
                if dim == 0 {
                    out.push(Violation::new("zero_dim", "quadratic dim must be >= 1"));
                }
                if !(eigen_min > 0.0 && eigen_min.is_finite()) {
                    out.push(Violation::new("non_positive_eigen", "eigen_min must be > 0"));
                }
                if !(eigen_max >= eigen_min && eigen_max.is_finite()) {
                    out.push(Violation::new(
                        "eigen_range_inverted",
                        "eigen_max must be >= eigen_min",
                    ));
                }
                if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
                    out.push(Violation::new("negative_noise", "noise_scale must be >= 0"));
                }
            }
            TaskSpec::SyntheticLm {
                vocab,
                context,
                embed,
                hidden,
                corpus_len,
                eval_positions,
                ..
            } => {
                if vocab < 2 {
                    out.push(Violation::new("vocab_too_small", "vocab must be >= 2"));
                }
                if vocab > u16::MAX as usize {
                    out.push(Violation::new("vocab_too_large", "vocab must fit in 16 bits"));
                }
                if context < 2 || embed == 0 || hidden == 0 {
                    out.push(Violation::new(
                        "zero_width",
                        "context must be >= 2 and embed, hidden >= 1",
                    ));
                }
                if corpus_len < 10 * (context + 1) {
                    out.push(Violation::new(
                        "corpus_too_short",
                        "corpus_len must be at least 10 * (context + 1)",
                    ));
                }
                if eval_positions == 0 {
                    out.push(Violation::new("no_eval_positions", "eval_positions must be >= 1"));
                }
            }
        }
        out
    }
}

/// Instantiated task: a stochastic loss/gradient oracle plus an exact
/// evaluation oracle.
#[derive(Debug, Clone)]
pub enum Task {
    Quadratic(NoisyQuadratic),
    Lm(SyntheticLm),
}

impl Task {
    pub fn new(spec: &TaskSpec) -> Self {
        match *spec {
            TaskSpec::NoisyQuadratic {
                dim,
                eigen_min,
                eigen_max,
                noise_scale,
            } => Task::Quadratic(NoisyQuadratic::new(dim, eigen_min, eigen_max, noise_scale)),
            TaskSpec::SyntheticLm {
                vocab,
                context,
                embed,
                hidden,
                corpus_seed,
                corpus_len,
                eval_positions,
            } => Task::Lm(SyntheticLm::new(
                LmShape {
                    vocab,
                    context,
                    embed,
                    hidden,
                },
                corpus_seed,
                corpus_len,
                eval_positions,
            )),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Task::Quadratic(q) => q.dim(),
            Task::Lm(m) => m.shape.n_params(),
        }
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Task::Quadratic(q) => q.init_params(rng),
            Task::Lm(m) => m.init_params(rng),
        }
    }

    /// Writes a minibatch gradient into `grad` and returns the minibatch loss.
    pub fn loss_grad(
        &self,
        params: &[f64],
        batch: usize,
        rng: &mut ChaCha8Rng,
        grad: &mut [f64],
    ) -> f64 {
        match self {
            Task::Quadratic(q) => q.loss_grad(params, batch, rng, grad),
            Task::Lm(m) => m.loss_grad(params, batch, rng, grad),
        }
    }

    pub fn eval_loss(&self, params: &[f64]) -> f64 {
        match self {
            Task::Quadratic(q) => q.loss(params),
            Task::Lm(m) => m.eval_loss(params),
        }
    }

    pub fn check_params(&self, params: &[f64]) -> crate::Result<()> {
        check_dims(self.dim(), params.len())
    }
}

#[derive(Debug, Clone)]
pub struct NoisyQuadratic {
    pub curvature: Vec<f64>,
    pub noise_scale: f64,
}

impl NoisyQuadratic {
    pub fn new(dim: usize, eigen_min: f64, eigen_max: f64, noise_scale: f64) -> Self {
        let curvature = if dim == 1 {
            vec![eigen_min]
        } else {
            let (lo, hi) = (eigen_min.ln(), eigen_max.ln());
            (0..dim)
                .map(|i| (lo + (hi - lo) * i as f64 / (dim - 1) as f64).exp())
                .collect()
        };
        Self {
            curvature,
            noise_scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.curvature.len()
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        0.5 * self
            .curvature
            .iter()
            .zip(w)
            .map(|(h, x)| h * x * x)
            .sum::<f64>()
    }

    /// Gradient `H w + sigma / sqrt(batch) * xi`, one standard normal per
    /// coordinate.
    pub fn loss_grad(&self, w: &[f64], batch: usize, rng: &mut ChaCha8Rng, grad: &mut [f64]) -> f64 {
        let scale = self.noise_scale / (batch as f64).sqrt();
        let mut loss = 0.0;
        for ((g, &h), &x) in grad.iter_mut().zip(&self.curvature).zip(w) {
            let xi: f64 = rng.sample(StandardNormal);
            let noise = scale * xi;
            *g = h * x + noise;
            loss += 0.5 * h * x * x + noise * x;
        }
        loss
    }

    /// Long-run expected loss of plain gradient descent at a constant `lr`.
    pub fn sgd_steady_state_loss(&self, lr: f64, batch: usize) -> f64 {
        let s2 = self.noise_scale * self.noise_scale / batch as f64;
        self.curvature
            .iter()
            .map(|&h| lr * s2 / (2.0 * (2.0 - lr * h)))
            .sum()
    }

    /// Expected loss after each plain gradient-descent step with the given
    /// learning rates, starting from `w0`. Entry `t` is the loss after `t`
    /// steps.
    pub fn sgd_expected_losses(&self, w0: &[f64], lrs: &[f64], batch: usize) -> Vec<f64> {
        let s2 = self.noise_scale * self.noise_scale / batch as f64;
        let mut second: Vec<f64> = w0.iter().map(|x| x * x).collect();
        let expected = |m: &[f64]| {
            0.5 * self
                .curvature
                .iter()
                .zip(m)
                .map(|(h, v)| h * v)
                .sum::<f64>()
        };
        let mut out = Vec::with_capacity(lrs.len() + 1);
        out.push(expected(&second));
        for &lr in lrs {
            for (m, &h) in second.iter_mut().zip(&self.curvature) {
                let c = 1.0 - lr * h;
                *m = c * c * *m + lr * lr * s2;
            }
            out.push(expected(&second));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmShape {
    pub vocab: usize,
    pub context: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl LmShape {
    fn input(&self) -> usize {
        self.context * self.embed
    }
    fn off_w1(&self) -> usize {
        self.vocab * self.embed
    }
    fn off_b1(&self) -> usize {
        self.off_w1() + self.hidden * self.input()
    }
    fn off_w2(&self) -> usize {
        self.off_b1() + self.hidden
    }
    fn off_b2(&self) -> usize {
        self.off_w2() + self.vocab * self.hidden
    }
    pub fn n_params(&self) -> usize {
        self.off_b2() + self.vocab
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticLm {
    pub shape: LmShape,
    pub corpus: Vec<u16>,
    /// Positions `context..train_end` are training targets.
    pub train_end: usize,
    eval_targets: Vec<usize>,
}

struct Scratch {
    x: Vec<f64>,
    h: Vec<f64>,
    p: Vec<f64>,
    dh: Vec<f64>,
}

impl SyntheticLm {
    pub fn new(shape: LmShape, corpus_seed: u64, corpus_len: usize, eval_positions: usize) -> Self {
        let corpus = markov_corpus(shape.vocab, corpus_len, corpus_seed);
        let train_end = corpus_len - corpus_len / 10;
        let eval_targets: Vec<usize> = (train_end + shape.context..corpus_len)
            .take(eval_positions)
            .collect();
        Self {
            shape,
            corpus,
            train_end,
            eval_targets,
        }
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.shape;
        let mut p = vec![0.0; s.n_params()];
        let mut fill = |range: std::ops::Range<usize>, std: f64| {
            for v in &mut p[range] {
                let z: f64 = rng.sample(StandardNormal);
                *v = std * z;
            }
        };
        fill(0..s.off_w1(), 0.5);
        fill(s.off_w1()..s.off_b1(), 1.0 / (s.input() as f64).sqrt());
        fill(s.off_w2()..s.off_b2(), 0.5 / (s.hidden as f64).sqrt());
        p
    }

    fn scratch(&self) -> Scratch {
        let s = self.shape;
        Scratch {
            x: vec![0.0; s.input()],
            h: vec![0.0; s.hidden],
            p: vec![0.0; s.vocab],
            dh: vec![0.0; s.hidden],
        }
    }

    /// Forward pass for the target at corpus position `t`; returns the
    /// cross-entropy and leaves activations in `sc`.
    fn forward(&self, params: &[f64], t: usize, sc: &mut Scratch) -> f64 {
        let s = self.shape;
        let e = s.embed;
        for k in 0..s.context {
            let tok = self.corpus[t - s.context + k] as usize;
            sc.x[k * e..(k + 1) * e].copy_from_slice(&params[tok * e..(tok + 1) * e]);
        }
        let w1 = &params[s.off_w1()..s.off_b1()];
        let b1 = &params[s.off_b1()..s.off_w2()];
        for j in 0..s.hidden {
            let row = &w1[j * s.input()..(j + 1) * s.input()];
            let a: f64 = row.iter().zip(&sc.x).map(|(w, x)| w * x).sum::<f64>() + b1[j];
            sc.h[j] = a.tanh();
        }
        let w2 = &params[s.off_w2()..s.off_b2()];
        let b2 = &params[s.off_b2()..];
        let mut max = f64::NEG_INFINITY;
        for v in 0..s.vocab {
            let row = &w2[v * s.hidden..(v + 1) * s.hidden];
            let z: f64 = row.iter().zip(&sc.h).map(|(w, h)| w * h).sum::<f64>() + b2[v];
            sc.p[v] = z;
            max = max.max(z);
        }
        let mut norm = 0.0;
        for z in sc.p.iter_mut() {
            *z = (*z - max).exp();
            norm += *z;
        }
        sc.p.iter_mut().for_each(|z| *z /= norm);
        let y = self.corpus[t] as usize;
        -sc.p[y].ln()
    }

    /// Accumulates `scale * dloss/dparams` for the example at `t` into `grad`.
    fn backward(&self, params: &[f64], t: usize, sc: &mut Scratch, scale: f64, grad: &mut [f64]) {
        let s = self.shape;
        let e = s.embed;
        let y = self.corpus[t] as usize;
        sc.p[y] -= 1.0;
        let (off_w1, off_b1, off_w2, off_b2) = (s.off_w1(), s.off_b1(), s.off_w2(), s.off_b2());
        sc.dh.iter_mut().for_each(|v| *v = 0.0);
        for v in 0..s.vocab {
            let dz = scale * sc.p[v];
            grad[off_b2 + v] += dz;
            let row = off_w2 + v * s.hidden;
            for j in 0..s.hidden {
                grad[row + j] += dz * sc.h[j];
                sc.dh[j] += dz * params[row + j];
            }
        }
        let n_in = s.input();
        let mut dx = vec![0.0; n_in];
        for j in 0..s.hidden {
            let da = sc.dh[j] * (1.0 - sc.h[j] * sc.h[j]);
            grad[off_b1 + j] += da;
            let row = off_w1 + j * n_in;
            for i in 0..n_in {
                grad[row + i] += da * sc.x[i];
                dx[i] += da * params[row + i];
            }
        }
        for k in 0..s.context {
            let tok = self.corpus[t - s.context + k] as usize;
            for d in 0..e {
                grad[tok * e + d] += dx[k * e + d];
            }
        }
    }

    pub fn loss_grad(&self, params: &[f64], batch: usize, rng: &mut ChaCha8Rng, grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut sc = self.scratch();
        let scale = 1.0 / batch as f64;
        let mut loss = 0.0;
        for _ in 0..batch {
            let t = rng.gen_range(self.shape.context..self.train_end);
            loss += self.forward(params, t, &mut sc);
            self.backward(params, t, &mut sc, scale, grad);
        }
        loss * scale
    }

    /// Mean loss and gradient over fixed positions (no sampling).
    pub fn loss_grad_at(&self, params: &[f64], targets: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut sc = self.scratch();
        let scale = 1.0 / targets.len() as f64;
        let mut loss = 0.0;
        for &t in targets {
            loss += self.forward(params, t, &mut sc);
            self.backward(params, t, &mut sc, scale, grad);
        }
        loss * scale
    }

    pub fn loss_at(&self, params: &[f64], targets: &[usize]) -> f64 {
        let mut sc = self.scratch();
        targets
            .iter()
            .map(|&t| self.forward(params, t, &mut sc))
            .sum::<f64>()
            / targets.len() as f64
    }

    pub fn eval_loss(&self, params: &[f64]) -> f64 {
        self.loss_at(params, &self.eval_targets)
    }

    pub fn eval_targets(&self) -> &[usize] {
        &self.eval_targets
    }

    pub fn held_out_len(&self) -> usize {
        self.eval_targets.len()
    }
}

/// Order-2 Markov chain whose next-token logits are the sum of a bigram term
/// for the previous token and a weaker term for the one before it, so the
/// statistics are learnable by a small model.
fn markov_corpus(vocab: usize, len: usize, seed: u64) -> Vec<u16> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let near = normal(vocab * vocab);
    let far = normal(vocab * vocab);
    let mut table = vec![0.0; vocab * vocab * vocab];
    for a in 0..vocab {
        for b in 0..vocab {
            let row = &mut table[(a * vocab + b) * vocab..(a * vocab + b + 1) * vocab];
            let mut total = 0.0;
            for (k, p) in row.iter_mut().enumerate() {
                *p = (2.5 * (near[b * vocab + k] + 0.5 * far[a * vocab + k])).exp();
                total += *p;
            }
            let mut acc = 0.0;
            for p in row.iter_mut() {
                acc += *p / total;
                *p = acc;
            }
        }
    }
    let mut out = Vec::with_capacity(len);
    for _ in 0..len.min(2) {
        out.push(rng.gen_range(0..vocab) as u16);
    }
    while out.len() < len {
        let n = out.len();
        let ctx = out[n - 2] as usize * vocab + out[n - 1] as usize;
        let row = &table[ctx * vocab..(ctx + 1) * vocab];
        let u: f64 = rng.gen();
        let next = row.iter().position(|&c| u < c).unwrap_or(vocab - 1);
        out.push(next as u16);
    }
    out
}
