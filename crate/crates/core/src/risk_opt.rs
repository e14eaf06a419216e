//! Scenario VaR / CVaR and simplex-constrained minimization.
//!
//! Both measures are reported as positive monthly losses. The minimizer is a
//! projected quasi-Newton SQP-style method with forward-difference gradients,
//! multi-started from equal weights and seeded Dirichlet(1) draws, followed by
//! a pairwise weight-transfer polish on the exact objective.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::simulation::{portfolio_returns, ScenarioMatrix, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskMeasure {
    VaR,
    CVaR,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub measure: RiskMeasure,
    /// Confidence level in (0, 1).
    pub alpha: f64,
}

impl RiskSpec {
    pub fn new(measure: RiskMeasure, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("confidence {alpha} must lie in (0, 1)")));
        }
        Ok(Self { measure, alpha })
    }

    pub fn evaluate(&self, returns: &[f64]) -> Result<f64> {
        match self.measure {
            RiskMeasure::VaR => var(returns, self.alpha),
            RiskMeasure::CVaR => cvar(returns, self.alpha),
        }
    }
}

impl fmt::Display for RiskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.measure {
            RiskMeasure::VaR => "var",
            RiskMeasure::CVaR => "cvar",
        };
        write!(f, "{name}{}", (self.alpha * 100.0).round() as u32)
    }
}

impl FromStr for RiskSpec {
    type Err = Error;

    /// `var95`, `cvar99`, ...
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (measure, level) = if let Some(rest) = lower.strip_prefix("cvar") {
            (RiskMeasure::CVaR, rest)
        } else if let Some(rest) = lower.strip_prefix("var") {
            (RiskMeasure::VaR, rest)
        } else {
            return Err(Error::Config(format!("unknown objective `{s}`")));
        };
        let pct: f64 = level
            .parse()
            .map_err(|_| Error::Config(format!("bad confidence in `{s}`")))?;
        RiskSpec::new(measure, pct / 100.0)
    }
}

/// 0-based position of the `(1 - alpha)` percentile among `k` sorted values.
///
/// A 1e-9 guard absorbs representation error in `1 - alpha` (so that
/// `alpha = 0.9, k = 20` lands on 2, not 1).
pub fn tail_index(alpha: f64, k: usize) -> usize {
    let pos = ((1.0 - alpha) * k as f64 + 1e-9).floor();
    (pos.max(0.0) as usize).min(k.saturating_sub(1))
}

/// Number of worst scenarios averaged by CVaR.
pub fn tail_count(alpha: f64, k: usize) -> usize {
    let m = ((1.0 - alpha) * k as f64 + 1e-9).floor() as usize;
    m.clamp(1, k.max(1))
}

fn check(returns: &[f64], alpha: f64) -> Result<()> {
    if returns.is_empty() {
        return Err(Error::domain("empty return vector"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("confidence {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

fn total(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}

/// Negative of the `(1 - alpha)` percentile of `returns`.
pub fn var(returns: &[f64], alpha: f64) -> Result<f64> {
    check(returns, alpha)?;
    let mut buf = returns.to_vec();
    Ok(var_in_place(&mut buf, alpha))
}

/// Negative mean of the `max(1, floor((1 - alpha) k))` smallest returns.
pub fn cvar(returns: &[f64], alpha: f64) -> Result<f64> {
    check(returns, alpha)?;
    let mut buf = returns.to_vec();
    Ok(cvar_in_place(&mut buf, alpha))
}

fn var_in_place(buf: &mut [f64], alpha: f64) -> f64 {
    let idx = tail_index(alpha, buf.len());
    let (_, v, _) = buf.select_nth_unstable_by(idx, total);
    -*v
}

fn cvar_in_place(buf: &mut [f64], alpha: f64) -> f64 {
    let m = tail_count(alpha, buf.len());
    if m < buf.len() {
        buf.select_nth_unstable_by(m - 1, total);
    }
    -buf[..m].iter().sum::<f64>() / m as f64
}

/// Piecewise-linear stand-ins used while searching: the percentile linearly
/// interpolated at position `(1 - alpha)(k - 1)`, and the tail mean over a
/// fractional count `(1 - alpha) k`.
fn surrogate_in_place(buf: &mut [f64], spec: RiskSpec) -> f64 {
    let k = buf.len();
    match spec.measure {
        RiskMeasure::VaR => {
            let pos = (1.0 - spec.alpha) * (k - 1) as f64;
            let lo = (pos.floor() as usize).min(k - 1);
            let frac = pos - lo as f64;
            let (_, v, right) = buf.select_nth_unstable_by(lo, total);
            let a = *v;
            let b = right.iter().copied().fold(f64::INFINITY, f64::min);
            if frac == 0.0 || !b.is_finite() {
                -a
            } else {
                -(a + frac * (b - a))
            }
        }
        RiskMeasure::CVaR => {
            let mf = ((1.0 - spec.alpha) * k as f64).max(1.0).min(k as f64);
            let whole = mf.floor() as usize;
            let frac = mf - whole as f64;
            if whole < k {
                buf.select_nth_unstable_by(whole, total);
            }
            let mut s: f64 = buf[..whole].iter().sum();
            if frac > 0.0 && whole < k {
                s += frac * buf[whole];
            }
            -s / mf
        }
    }
}

fn exact_in_place(buf: &mut [f64], spec: RiskSpec) -> f64 {
    match spec.measure {
        RiskMeasure::VaR => var_in_place(buf, spec.alpha),
        RiskMeasure::CVaR => cvar_in_place(buf, spec.alpha),
    }
}

/// Exact objective of weights `w` on matrix `m`.
pub fn objective(w: &[f64], m: &ScenarioMatrix, spec: RiskSpec) -> Result<f64> {
    spec.evaluate(&portfolio_returns(w, m)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    /// Total starts, the first being equal weights.
    pub starts: usize,
    pub max_iterations: usize,
    /// A start stops once an iteration improves the surrogate by less.
    pub tolerance: f64,
    pub fd_step: f64,
    /// Exact-objective evaluations spent on the pairwise polish.
    pub polish_evaluations: usize,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            starts: 10,
            max_iterations: 200,
            tolerance: 1e-6,
            fd_step: 1e-4,
            polish_evaluations: 5_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSolution {
    pub weights: WeightVector,
    /// Exact VaR / CVaR at `weights` (monthly loss).
    pub objective: f64,
    pub evaluations: usize,
    pub start_index: usize,
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        acc += uj;
        let t = (acc - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x = (*x / s).min(1.0));
    }
    w
}

/// Dirichlet(1) draw.
pub fn dirichlet_ones(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

struct Problem<'a> {
    m: &'a ScenarioMatrix,
    spec: RiskSpec,
    scratch: Vec<f64>,
    evaluations: usize,
}

impl<'a> Problem<'a> {
    fn eval(&mut self, returns: &[f64], exact: bool) -> f64 {
        self.evaluations += 1;
        self.scratch.clear();
        self.scratch.extend_from_slice(returns);
        if exact {
            exact_in_place(&mut self.scratch, self.spec)
        } else {
            surrogate_in_place(&mut self.scratch, self.spec)
        }
    }

    fn returns(&self, w: &[f64]) -> Vec<f64> {
        portfolio_returns(w, self.m).expect("dimension checked")
    }

    /// Forward differences along each coordinate, reusing the base returns.
    fn gradient(&mut self, base: &[f64], f0: f64, h: f64) -> Vec<f64> {
        let mut shifted = vec![0.0; base.len()];
        (0..self.m.n)
            .map(|i| {
                for ((s, b), r) in shifted.iter_mut().zip(base).zip(self.m.row(i)) {
                    *s = b + h * r;
                }
                (self.eval(&shifted, false) - f0) / h
            })
            .collect()
    }
}

struct LocalResult {
    w: Vec<f64>,
    exact: f64,
}

fn project_tangent(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn mat_vec(h: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| h[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn identity(n: usize, scale: f64) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = scale;
    }
    h
}

/// BFGS update of the inverse Hessian approximation.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64]) -> bool {
    let n = s.len();
    let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
    if !(sy > 1e-12) {
        return false;
    }
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    true
}

fn local_search(p: &mut Problem<'_>, start: Vec<f64>, cfg: &OptConfig) -> LocalResult {
    let n = start.len();
    let mut w = start;
    let mut r = p.returns(&w);
    let mut f = p.eval(&r, false);
    let mut best = LocalResult {
        exact: p.eval(&r, true),
        w: w.clone(),
    };
    let mut g = p.gradient(&r, f, cfg.fd_step);
    project_tangent(&mut g);
    let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut h = identity(n, 1.0 / gnorm.max(1e-12));
    let mut fresh = true;

    for _ in 0..cfg.max_iterations {
        let mut d: Vec<f64> = mat_vec(&h, &g).iter().map(|x| -x).collect();
        project_tangent(&mut d);
        if d.iter().all(|x| x.abs() < 1e-15) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let wt = project_to_simplex(&trial);
            let rt = p.returns(&wt);
            let ft = p.eval(&rt, false);
            let decrease: f64 = g.iter().zip(wt.iter().zip(&w)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if ft <= f + 1e-4 * decrease.min(0.0) && ft < f {
                accepted = Some((wt, rt, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((wn, rn, fnew)) = accepted else {
            if fresh {
                break;
            }
            // Restart the curvature model once before giving up.
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            h = identity(n, 1.0 / gnorm.max(1e-12));
            fresh = true;
            continue;
        };
        let exact = p.eval(&rn, true);
        if exact < best.exact {
            best = LocalResult {
                exact,
                w: wn.clone(),
            };
        }
        let mut gn = p.gradient(&rn, fnew, cfg.fd_step);
        project_tangent(&mut gn);
        let s: Vec<f64> = wn.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if fresh {
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let yy: f64 = y.iter().map(|v| v * v).sum();
            if sy > 1e-12 && yy > 0.0 {
                h = identity(n, sy / yy);
            }
        }
        fresh = !bfgs_update(&mut h, &s, &y);
        if fresh {
            let gnorm = gn.iter().map(|x| x * x).sum::<f64>().sqrt();
            h = identity(n, 1.0 / gnorm.max(1e-12));
        }
        let improvement = f - fnew;
        w = wn;
        r = rn;
        f = fnew;
        g = gn;
        if improvement < cfg.tolerance {
            break;
        }
    }
    let _ = r;
    best
}

/// Move weight between pairs of loans with shrinking step sizes, accepting
/// any strict decrease of the exact objective.
fn polish(p: &mut Problem<'_>, mut best: LocalResult, budget: usize) -> LocalResult {
    let n = best.w.len();
    if n < 2 || budget == 0 {
        return best;
    }
    let stop_at = p.evaluations + budget;
    let mut r = p.returns(&best.w);
    let mut trial = vec![0.0; r.len()];
    let mut step: f64 = 0.05;
    while step > 1e-7 {
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j || best.w[i] <= 0.0 {
                    continue;
                }
                if p.evaluations >= stop_at {
                    return best;
                }
                let delta = step.min(best.w[i]);
                for ((t, base), (ri, rj)) in trial
                    .iter_mut()
                    .zip(&r)
                    .zip(p.m.row(i).iter().zip(p.m.row(j)))
                {
                    *t = base + delta * (rj - ri);
                }
                let f = p.eval(&trial, true);
                if f < best.exact - 1e-15 {
                    best.w[i] -= delta;
                    best.w[j] += delta;
                    if best.w[i] < 1e-15 {
                        best.w[i] = 0.0;
                    }
                    best.exact = f;
                    std::mem::swap(&mut r, &mut trial);
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.25;
        }
    }
    best
}

/// Minimize VaR or CVaR of `w^T R` over the simplex.
pub fn minimize_risk(m: &ScenarioMatrix, spec: RiskSpec, cfg: &OptConfig) -> Result<PortfolioSolution> {
    let spec = RiskSpec::new(spec.measure, spec.alpha)?;
    if m.n == 0 || m.k == 0 {
        return Err(Error::domain("empty scenario matrix"));
    }
    if m.returns.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite scenario returns"));
    }
    let n = m.n;
    let equal = WeightVector::equal(n).0;
    let identical_rows = (1..n).all(|i| m.row(i) == m.row(0));
    let mut p = Problem {
        m,
        spec,
        scratch: Vec::with_capacity(m.k),
        evaluations: 0,
    };
    if n == 1 || identical_rows {
        let r = p.returns(&equal);
        let objective = p.eval(&r, true);
        return Ok(PortfolioSolution {
            weights: WeightVector(equal),
            objective,
            evaluations: p.evaluations,
            start_index: 0,
        });
    }

    let mut rng = rng::chacha(cfg.seed);
    let mut starts = vec![equal];
    for _ in 1..cfg.starts.max(1) {
        starts.push(dirichlet_ones(n, &mut rng));
    }
    let mut winner: Option<(usize, LocalResult)> = None;
    for (idx, start) in starts.into_iter().enumerate() {
        let res = local_search(&mut p, start, cfg);
        let better = match &winner {
            None => true,
            Some((_, w)) => res.exact < w.exact,
        };
        if better {
            winner = Some((idx, res));
        }
    }
    let (start_index, best) = winner.expect("at least one start");
    let best = polish(&mut p, best, cfg.polish_evaluations);

    // Rounding in the polish can leave a weight a few ulps outside [0, 1].
    let weights = WeightVector(best.w.into_iter().map(|x| x.clamp(0.0, 1.0)).collect());
    let objective = objective(weights.as_slice(), m, spec)?;
    Ok(PortfolioSolution {
        weights,
        objective,
        evaluations: p.evaluations,
        start_index,
    })
}
