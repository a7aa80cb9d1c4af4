//! Scaling-law fitting for `L(N, D) = A / N^alpha + B / D^beta + E`.
//!
//! The fit minimises a Huber loss on log-loss residuals with the law written
//! as `log L = logsumexp(a - alpha log N, b - beta log D, e)`, where
//! `A = exp(a)`, `B = exp(b)`, `E = exp(e)`. The objective is first evaluated
//! on a grid of starting points; the best `n_restarts` of them are refined
//! with BFGS. Nested laws without the `A` and/or `B` term are fitted the same
//! way, and the simplest law whose objective matches the full law's is kept.

use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub n_params: f64,
    pub tokens: f64,
    pub loss: f64,
}

impl DataPoint {
    pub fn new(n_params: f64, tokens: f64, loss: f64) -> Self {
        Self {
            n_params,
            tokens,
            loss,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.n_params) && ok(self.tokens) && ok(self.loss) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "data point {self:?} must have finite positive entries"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawParams {
    pub a: f64,
    pub alpha: f64,
    pub b: f64,
    pub beta: f64,
    pub e: f64,
}

impl LawParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.a, self.alpha, self.b, self.beta, self.e];
        if vals.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "law parameters must be finite and non-negative: {self:?}"
            )))
        }
    }

    pub fn predict(&self, n_params: f64, tokens: f64) -> Result<f64> {
        predict(self, n_params, tokens)
    }
}

pub fn predict(p: &LawParams, n_params: f64, tokens: f64) -> Result<f64> {
    if !(n_params > 0.0 && tokens > 0.0) {
        return Err(Error::domain(format!(
            "N and D must be positive, got N = {n_params}, D = {tokens}"
        )));
    }
    Ok(p.a * n_params.powf(-p.alpha) + p.b * tokens.powf(-p.beta) + p.e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartGrid {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub e: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for StartGrid {
    fn default() -> Self {
        let logs = vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0];
        let exps = vec![0.0, 0.5, 1.0, 1.5, 2.0];
        Self {
            a: logs.clone(),
            b: logs.clone(),
            e: logs,
            alpha: exps.clone(),
            beta: exps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Number of best grid points refined by BFGS.
    pub n_restarts: usize,
    pub huber_delta: f64,
    pub max_iters: usize,
    /// Stop when the gradient's infinity norm drops below this.
    pub tolerance: f64,
    pub grid: StartGrid,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_restarts: 32,
            huber_delta: 1e-3,
            max_iters: 2000,
            tolerance: 1e-14,
            grid: StartGrid::default(),
        }
    }
}

/// Which additive terms of the law are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawForm {
    Full,
    ParamsOnly,
    TokensOnly,
    Constant,
}

impl LawForm {
    fn uses_a(self) -> bool {
        matches!(self, LawForm::Full | LawForm::ParamsOnly)
    }
    fn uses_b(self) -> bool {
        matches!(self, LawForm::Full | LawForm::TokensOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: LawParams,
    pub form: LawForm,
    pub objective: f64,
    /// `log(predicted) - log(observed)` per input point, in input order.
    pub residuals: Vec<f64>,
    pub n_restarts_used: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

struct Problem {
    log_n: Vec<f64>,
    log_d: Vec<f64>,
    log_l: Vec<f64>,
    weight: Vec<f64>,
    delta: f64,
}

fn huber(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (0.5 * r * r, r)
    } else {
        (delta * (r.abs() - 0.5 * delta), delta * r.signum())
    }
}

// theta = [a, alpha, b, beta, e]; inactive terms are dropped from the sum.
impl Problem {
    fn log_pred(&self, form: LawForm, th: &[f64; 5], i: usize) -> (f64, [f64; 3]) {
        let ta = th[0] - th[1] * self.log_n[i];
        let tb = th[2] - th[3] * self.log_d[i];
        let te = th[4];
        let mut m = te;
        if form.uses_a() {
            m = m.max(ta);
        }
        if form.uses_b() {
            m = m.max(tb);
        }
        let ea = if form.uses_a() { (ta - m).exp() } else { 0.0 };
        let eb = if form.uses_b() { (tb - m).exp() } else { 0.0 };
        let ee = (te - m).exp();
        let s = ea + eb + ee;
        (m + s.ln(), [ea / s, eb / s, ee / s])
    }

    fn value(&self, form: LawForm, th: &[f64; 5]) -> f64 {
        (0..self.log_l.len())
            .map(|i| {
                let (lp, _) = self.log_pred(form, th, i);
                self.weight[i] * huber(lp - self.log_l[i], self.delta).0
            })
            .sum()
    }

    fn value_grad(&self, form: LawForm, th: &[f64; 5]) -> (f64, [f64; 5]) {
        let mut f = 0.0;
        let mut g = [0.0; 5];
        for i in 0..self.log_l.len() {
            let (lp, w) = self.log_pred(form, th, i);
            let (h, dh) = huber(lp - self.log_l[i], self.delta);
            let c = self.weight[i];
            f += c * h;
            let s = c * dh;
            g[0] += s * w[0];
            g[1] -= s * w[0] * self.log_n[i];
            g[2] += s * w[1];
            g[3] -= s * w[1] * self.log_d[i];
            g[4] += s * w[2];
        }
        if !form.uses_a() {
            g[0] = 0.0;
            g[1] = 0.0;
        }
        if !form.uses_b() {
            g[2] = 0.0;
            g[3] = 0.0;
        }
        (f, g)
    }
}

fn dot(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64; 5]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// BFGS with Armijo backtracking. Never returns a point worse than `x0`.
fn bfgs(prob: &Problem, form: LawForm, x0: [f64; 5], opts: &FitOptions) -> ([f64; 5], f64) {
    let mut x = x0;
    let (mut f, mut g) = prob.value_grad(form, &x);
    let mut h = [[0.0; 5]; 5];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..opts.max_iters {
        if inf_norm(&g) <= opts.tolerance || f == 0.0 {
            break;
        }
        let mut p = [0.0; 5];
        for i in 0..5 {
            p[i] = -(0..5).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&p, &g);
        if slope >= 0.0 {
            // lost descent; restart from steepest descent
            for (i, row) in h.iter_mut().enumerate() {
                *row = [0.0; 5];
                row[i] = 1.0;
            }
            p = g.map(|v| -v);
            slope = dot(&p, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: [f64; 5] = std::array::from_fn(|i| x[i] + step * p[i]);
            let fnew = prob.value(form, &xn);
            if fnew.is_finite() && fnew <= f + 1e-4 * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let (_, gn) = prob.value_grad(form, &xn);
        let s: [f64; 5] = std::array::from_fn(|i| xn[i] - x[i]);
        let y: [f64; 5] = std::array::from_fn(|i| gn[i] - g[i]);
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy: [f64; 5] = std::array::from_fn(|i| (0..5).map(|j| h[i][j] * y[j]).sum());
            let yhy = dot(&y, &hy);
            for i in 0..5 {
                for j in 0..5 {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let stalled = f - fnew <= f64::EPSILON * f.abs();
        x = xn;
        f = fnew;
        g = gn;
        if stalled && inf_norm(&g) <= opts.tolerance.max(1e-12) {
            break;
        }
    }
    (x, f)
}

fn form_theta(form: LawForm, th: [f64; 5]) -> [f64; 5] {
    let mut t = th;
    if !form.uses_a() {
        t[0] = f64::NEG_INFINITY;
        t[1] = 0.0;
    }
    if !form.uses_b() {
        t[2] = f64::NEG_INFINITY;
        t[3] = 0.0;
    }
    t
}

fn grid_points(form: LawForm, grid: &StartGrid) -> Vec<[f64; 5]> {
    let zero = [0.0];
    let (ga, galpha): (&[f64], &[f64]) = if form.uses_a() {
        (&grid.a, &grid.alpha)
    } else {
        (&zero, &zero)
    };
    let (gb, gbeta): (&[f64], &[f64]) = if form.uses_b() {
        (&grid.b, &grid.beta)
    } else {
        (&zero, &zero)
    };
    let mut out = Vec::new();
    for &a in ga {
        for &alpha in galpha {
            for &b in gb {
                for &beta in gbeta {
                    for &e in &grid.e {
                        out.push([a, alpha, b, beta, e]);
                    }
                }
            }
        }
    }
    out
}

fn better(a: &(f64, [f64; 5]), b: &(f64, [f64; 5])) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            for (x, y) in a.1.iter().zip(&b.1) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Less => return true,
                    std::cmp::Ordering::Greater => return false,
                    _ => {}
                }
            }
            false
        }
    }
}

fn pick_best(cands: impl IntoIterator<Item = (f64, [f64; 5])>) -> Option<(f64, [f64; 5])> {
    cands.into_iter().fold(None, |best, c| match best {
        Some(b) if !better(&c, &b) => Some(b),
        _ => Some(c),
    })
}

struct FormFit {
    theta: [f64; 5],
    objective: f64,
    refined: usize,
}

fn fit_form(prob: &Problem, form: LawForm, opts: &FitOptions) -> Option<FormFit> {
    let mut scored: Vec<(f64, [f64; 5])> = grid_points(form, &opts.grid)
        .into_par_iter()
        .map(|th| (prob.value(form, &th), th))
        .collect();
    scored.sort_by(|x, y| {
        if better(x, y) {
            std::cmp::Ordering::Less
        } else if better(y, x) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    let starts: Vec<[f64; 5]> = scored
        .iter()
        .take(opts.n_restarts.max(1))
        .map(|s| s.1)
        .collect();
    let refined: Vec<(f64, [f64; 5])> = starts
        .par_iter()
        .map(|&th| {
            let (x, f) = bfgs(prob, form, th, opts);
            (f, x)
        })
        .collect();
    let feasible = refined
        .iter()
        .copied()
        .filter(|(f, x)| f.is_finite() && x.iter().all(|v| v.is_finite()) && x[1] >= 0.0 && x[3] >= 0.0);
    // the best grid point always competes, so refinement never loses to it
    let best = pick_best(feasible.chain(scored.first().copied()))?;
    Some(FormFit {
        theta: best.1,
        objective: best.0,
        refined: starts.len(),
    })
}

/// Fits with unit weights.
pub fn fit(points: &[DataPoint], opts: &FitOptions) -> Result<FitReport> {
    fit_weighted(points, &vec![1.0; points.len()], opts)
}

/// Fits with per-point objective weights. Exactly repeated points are merged
/// (weights summed) before fitting.
pub fn fit_weighted(points: &[DataPoint], weights: &[f64], opts: &FitOptions) -> Result<FitReport> {
    if weights.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: weights.len(),
        });
    }
    if points.len() < 5 {
        return Err(Error::domain(format!(
            "need at least 5 points to fit 5 parameters, got {}",
            points.len()
        )));
    }
    if !(opts.huber_delta > 0.0) {
        return Err(Error::domain("huber_delta must be > 0"));
    }
    for p in points {
        p.check()?;
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::domain("weights must be finite and positive"));
    }

    let mut uniq: Vec<(DataPoint, f64)> = Vec::new();
    for (p, &w) in points.iter().zip(weights) {
        match uniq.iter_mut().find(|(q, _)| q == p) {
            Some((_, acc)) => *acc += w,
            None => uniq.push((*p, w)),
        }
    }

    let mut warnings = Vec::new();
    let distinct = |key: fn(&DataPoint) -> f64| {
        let mut v: Vec<f64> = uniq.iter().map(|(p, _)| key(p)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct(|p| p.n_params) < 2 {
        warnings.push("degenerate span: fewer than 2 distinct N values".to_string());
    }
    if distinct(|p| p.tokens) < 2 {
        warnings.push("degenerate span: fewer than 2 distinct D values".to_string());
    }

    let prob = Problem {
        log_n: uniq.iter().map(|(p, _)| p.n_params.ln()).collect(),
        log_d: uniq.iter().map(|(p, _)| p.tokens.ln()).collect(),
        log_l: uniq.iter().map(|(p, _)| p.loss.ln()).collect(),
        weight: uniq.iter().map(|(_, w)| *w).collect(),
        delta: opts.huber_delta,
    };

    let full = fit_form(&prob, LawForm::Full, opts)
        .ok_or_else(|| Error::domain("no feasible fit found"))?;
    let mut chosen = (LawForm::Full, full.theta, full.objective);
    let mut used = full.refined;
    let slack = 1e-12 * full.objective.abs() + 1e-300;
    for form in [LawForm::Constant, LawForm::ParamsOnly, LawForm::TokensOnly] {
        if let Some(r) = fit_form(&prob, form, opts) {
            used += r.refined;
            if r.objective <= full.objective + slack {
                chosen = (form, form_theta(form, r.theta), r.objective);
                break;
            }
        }
    }

    let (form, th, objective) = chosen;
    let params = LawParams {
        a: th[0].exp(),
        alpha: th[1],
        b: th[2].exp(),
        beta: th[3],
        e: th[4].exp(),
    };
    let residuals = points
        .iter()
        .map(|p| Ok(predict(&params, p.n_params, p.tokens)?.ln() - p.loss.ln()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FitReport {
        params,
        form,
        objective,
        residuals,
        n_restarts_used: used,
        warnings,
    })
}

/// Reads `n_params,tokens,loss` rows.
pub fn read_points_csv<R: Read>(input: R) -> Result<Vec<DataPoint>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["n_params", "tokens", "loss"] {
        return Err(Error::domain(format!(
            "expected header `n_params,tokens,loss`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let p: DataPoint = rec?;
        p.check()?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRUTH: LawParams = LawParams {
        a: 400.0,
        alpha: 0.34,
        b: 410.0,
        beta: 0.28,
        e: 1.69,
    };

    fn grid_data(p: &LawParams) -> Vec<DataPoint> {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                let n = 10f64.powf(7.0 + 0.5 * i as f64);
                let d = 10f64.powf(8.5 + 0.6 * j as f64);
                pts.push(DataPoint::new(n, d, p.predict(n, d).unwrap()));
            }
        }
        pts
    }

    #[test]
    fn predict_examples() {
        let e_only = LawParams {
            a: 0.0,
            alpha: 0.3,
            b: 0.0,
            beta: 0.3,
            e: 2.0,
        };
        assert_eq!(e_only.predict(123.0, 4.5e9).unwrap(), 2.0);
        let single = LawParams {
            a: 1.0,
            alpha: 1.0,
            b: 0.0,
            beta: 0.0,
            e: 0.0,
        };
        assert!((single.predict(10.0, 1.0).unwrap() - 0.1).abs() < 1e-16);
        assert!(TRUTH.predict(0.0, 1.0).is_err());
        assert!(TRUTH.predict(1.0, -1.0).is_err());
    }

    #[test]
    fn predict_matches_high_precision_value() {
        // 400 * 10^(-3.06) + 410 * 10^(-2.8) + 1.69, evaluated to 20 digits
        // with an arbitrary-precision calculator.
        let expected = 2.688_191_644_891_488_8;
        let got = TRUTH.predict(1e9, 1e10).unwrap();
        assert!((got - expected).abs() < 1e-13, "{got}");
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let rep = fit(&grid_data(&TRUTH), &FitOptions::default()).unwrap();
        assert_eq!(rep.form, LawForm::Full);
        let p = rep.params;
        for (got, want) in [
            (p.a, TRUTH.a),
            (p.alpha, TRUTH.alpha),
            (p.b, TRUTH.b),
            (p.beta, TRUTH.beta),
            (p.e, TRUTH.e),
        ] {
            assert!(((got - want) / want).abs() < 0.01, "{p:?}");
        }
        assert_eq!(rep.residuals.len(), 25);
    }

    #[test]
    fn constant_data_fits_irreducible_term() {
        let c = 3.2;
        let pts: Vec<_> = grid_data(&TRUTH)
            .into_iter()
            .map(|p| DataPoint::new(p.n_params, p.tokens, c))
            .collect();
        let rep = fit(&pts, &FitOptions::default()).unwrap();
        assert!((rep.params.e - c).abs() < 1e-6, "{:?}", rep.params);
        for p in &pts {
            let pred = rep.params.predict(p.n_params, p.tokens).unwrap();
            let power = pred - rep.params.e;
            assert!(power.abs() < 1e-6 * pred);
        }
    }

    #[test]
    fn duplicates_equal_double_weights() {
        let base = grid_data(&TRUTH);
        let noisy: Vec<_> = base
            .iter()
            .enumerate()
            .map(|(i, p)| DataPoint::new(p.n_params, p.tokens, p.loss * (1.0 + 0.01 * ((i * 7 % 5) as f64 - 2.0))))
            .collect();
        let mut doubled = noisy.clone();
        doubled.extend(noisy.iter().copied());
        let opts = FitOptions::default();
        let a = fit(&doubled, &opts).unwrap();
        let b = fit_weighted(&noisy, &vec![2.0; noisy.len()], &opts).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective, b.objective);
        assert_eq!(&a.residuals[..25], &b.residuals[..]);
    }

    #[test]
    fn too_few_points() {
        let pts = &grid_data(&TRUTH)[..4];
        assert!(matches!(fit(pts, &FitOptions::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_span_warns() {
        let pts: Vec<_> = (0..6)
            .map(|j| {
                let d = 1e9 * (j + 1) as f64;
                DataPoint::new(1e8, d, TRUTH.predict(1e8, d).unwrap())
            })
            .collect();
        let rep = fit(&pts, &FitOptions::default()).unwrap();
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn result_never_worse_than_grid_starts() {
        let pts: Vec<_> = grid_data(&TRUTH)
            .iter()
            .enumerate()
            .map(|(i, p)| DataPoint::new(p.n_params, p.tokens, p.loss * (1.0 + 0.03 * ((i % 3) as f64 - 1.0))))
            .collect();
        let opts = FitOptions::default();
        let rep = fit(&pts, &opts).unwrap();
        let prob = Problem {
            log_n: pts.iter().map(|p| p.n_params.ln()).collect(),
            log_d: pts.iter().map(|p| p.tokens.ln()).collect(),
            log_l: pts.iter().map(|p| p.loss.ln()).collect(),
            weight: vec![1.0; pts.len()],
            delta: opts.huber_delta,
        };
        for th in grid_points(LawForm::Full, &opts.grid) {
            assert!(rep.objective <= prob.value(LawForm::Full, &th));
        }
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let pts = grid_data(&TRUTH);
        let prob = Problem {
            log_n: pts.iter().map(|p| p.n_params.ln()).collect(),
            log_d: pts.iter().map(|p| p.tokens.ln()).collect(),
            log_l: pts.iter().map(|p| (p.loss * 1.2).ln()).collect(),
            weight: vec![1.0; pts.len()],
            delta: 0.5,
        };
        let th = [5.5, 0.3, 6.2, 0.25, 0.4];
        let (_, g) = prob.value_grad(LawForm::Full, &th);
        for k in 0..5 {
            let h = 1e-6;
            let mut hi = th;
            let mut lo = th;
            hi[k] += h;
            lo[k] -= h;
            let fd = (prob.value(LawForm::Full, &hi) - prob.value(LawForm::Full, &lo)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1e-3), "k={k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn csv_input() {
        let text = "n_params,tokens,loss\n1e7,2e8,3.5\n2e7,4e8,3.1\n";
        let pts = read_points_csv(text.as_bytes()).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1], DataPoint::new(2e7, 4e8, 3.1));
        assert!(read_points_csv("n,d,l\n1,2,3\n".as_bytes()).is_err());
        assert!(read_points_csv("n_params,tokens,loss\n1,-2,3\n".as_bytes()).is_err());
    }
}
