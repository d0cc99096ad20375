//! Bound- and interval-constrained minimization of smooth functions.
//!
//! Each start runs a penalty method: two-sided constraints `lo <= g(x) <= hi`
//! become a pair of one-sided quadratic penalties with multiplier shifts
//! (Powell-Hestenes-Rockafellar), the penalty weight grows geometrically
//! while the violation stalls, and every subproblem is solved by a
//! projected BFGS iteration on finite-difference gradients. Starts are
//! independent; the best feasible result wins.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type Objective<'a> = Box<dyn Fn(&[f64]) -> f64 + Send + Sync + 'a>;
type ConstraintFn<'a> = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync + 'a>;

pub struct ConstrainedProblem<'a> {
    dim: usize,
    objective: Objective<'a>,
    constraints: Option<ConstraintFn<'a>>,
    intervals: Vec<(f64, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    starts: Vec<Vec<f64>>,
}

impl<'a> ConstrainedProblem<'a> {
    /// Unbounded, unconstrained problem of dimension `dim`.
    pub fn new(dim: usize, objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'a) -> Self {
        ConstrainedProblem {
            dim,
            objective: Box::new(objective),
            constraints: None,
            intervals: Vec::new(),
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            starts: Vec::new(),
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    /// Constraint functions writing `intervals.len()` values into their
    /// output slice. An interval of `(-inf, inf)` disables its constraint.
    pub fn with_constraints(
        mut self,
        intervals: Vec<(f64, f64)>,
        g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'a,
    ) -> Self {
        self.intervals = intervals;
        self.constraints = Some(Box::new(g));
        self
    }

    pub fn with_starts(mut self, starts: Vec<Vec<f64>>) -> Self {
        self.starts = starts;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn starts(&self) -> &[Vec<f64>] {
        &self.starts
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        (self.objective)(x)
    }

    pub fn constraint_values(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.intervals.len()];
        if let Some(g) = &self.constraints {
            g(x, &mut out);
        }
        out
    }

    /// Largest amount by which `x` misses a bound or a constraint interval.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max);
        let cons = self
            .constraint_values(x)
            .iter()
            .zip(&self.intervals)
            .map(|(&c, &(lo, hi))| interval_violation(c, lo, hi))
            .fold(0.0, f64::max);
        bounds.max(cons)
    }

    fn validate(&self) -> Result<()> {
        if self.lower.len() != self.dim || self.upper.len() != self.dim {
            return Err(Error::Config("bound vectors do not match the dimension".into()));
        }
        if let Some(i) = (0..self.dim).find(|&i| !(self.lower[i] <= self.upper[i])) {
            return Err(Error::Config(format!("bound {i}: lower > upper")));
        }
        if let Some((i, _)) = self.intervals.iter().enumerate().find(|(_, &(lo, hi))| !(lo <= hi)) {
            return Err(Error::Config(format!("constraint {i}: lower > upper")));
        }
        if self.starts.is_empty() {
            return Err(Error::Config("at least one initial point is required".into()));
        }
        if let Some(s) = self.starts.iter().find(|s| s.len() != self.dim) {
            return Err(Error::Config(format!("initial point of length {} for dimension {}", s.len(), self.dim)));
        }
        Ok(())
    }

    fn clamp(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(lo, hi);
        }
    }
}

fn interval_violation(c: f64, lo: f64, hi: f64) -> f64 {
    if c.is_nan() {
        return f64::INFINITY;
    }
    (lo - c).max(c - hi).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizerConfig {
    /// Allowed constraint violation, in constraint units.
    pub feasibility_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Projected-gradient tolerance for the subproblems.
    pub gradient_tol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Run starts on the rayon pool.
    pub parallel: bool,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        MinimizerConfig {
            feasibility_tol: 1e-6,
            max_outer: 40,
            max_inner: 500,
            gradient_tol: 1e-9,
            fd_step: 1e-6,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e10,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimizationStatus {
    /// Feasible within tolerance and the last subproblem converged.
    Converged,
    /// Feasible, but an iteration budget ran out.
    Feasible,
    /// No start reached feasibility.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizationResult {
    pub value: f64,
    pub x: Vec<f64>,
    pub max_violation: f64,
    /// Total subproblem iterations of the winning start.
    pub iterations: usize,
    pub converged: bool,
    pub status: MinimizationStatus,
    /// Index of the start that produced the result.
    pub start_index: usize,
}

impl MinimizationResult {
    pub fn is_feasible(&self) -> bool {
        self.status != MinimizationStatus::Infeasible
    }
}

/// Best feasible point over all starts of `problem`.
pub fn minimize(problem: &ConstrainedProblem<'_>, cfg: &MinimizerConfig) -> Result<MinimizationResult> {
    problem.validate()?;
    let run = |(i, s): (usize, &Vec<f64>)| {
        let mut r = solve_from(problem, s, cfg);
        r.start_index = i;
        // a start that is already feasible is itself a candidate
        let mut x0 = s.clone();
        problem.clamp(&mut x0);
        let v0 = problem.max_violation(&x0);
        if v0 <= cfg.feasibility_tol {
            let f0 = problem.objective(&x0);
            if !r.is_feasible() || f0 < r.value {
                r = MinimizationResult {
                    value: f0,
                    x: x0,
                    max_violation: v0,
                    iterations: r.iterations,
                    converged: r.converged,
                    status: if r.converged { MinimizationStatus::Converged } else { MinimizationStatus::Feasible },
                    start_index: i,
                };
            }
        }
        r
    };
    let results: Vec<MinimizationResult> = if cfg.parallel {
        problem.starts.par_iter().enumerate().map(run).collect()
    } else {
        problem.starts.iter().enumerate().map(run).collect()
    };
    Ok(results.into_iter().min_by(compare_results).expect("at least one start"))
}

/// Feasible before infeasible, then by value, then lexicographically by `x`.
fn compare_results(a: &MinimizationResult, b: &MinimizationResult) -> Ordering {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => return Ordering::Less,
        (false, true) => return Ordering::Greater,
        (false, false) => return a.max_violation.total_cmp(&b.max_violation),
        _ => {}
    }
    a.value.total_cmp(&b.value).then_with(|| {
        a.x.iter()
            .zip(&b.x)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Penalty contribution of one one-sided constraint `g <= 0`.
#[inline]
fn phr(multiplier: f64, g: f64, rho: f64) -> f64 {
    let t = (multiplier + rho * g).max(0.0);
    (t * t - multiplier * multiplier) / (2.0 * rho)
}

fn solve_from(problem: &ConstrainedProblem<'_>, start: &[f64], cfg: &MinimizerConfig) -> MinimizationResult {
    let mut x = start.to_vec();
    problem.clamp(&mut x);
    let active: Vec<usize> = problem
        .intervals
        .iter()
        .enumerate()
        .filter(|(_, &(lo, hi))| lo.is_finite() || hi.is_finite())
        .map(|(i, _)| i)
        .collect();
    let mut mult_lo = vec![0.0; problem.intervals.len()];
    let mut mult_hi = vec![0.0; problem.intervals.len()];
    let mut rho = cfg.initial_penalty;
    let mut prev_violation = f64::INFINITY;
    let mut prev_value = f64::NAN;
    let mut iterations = 0;
    let mut converged = false;
    let mut scratch = vec![0.0; problem.intervals.len()];

    for _ in 0..cfg.max_outer {
        let lagrangian = |x: &[f64]| -> f64 {
            let mut val = problem.objective(x);
            if active.is_empty() {
                return val;
            }
            let mut c = vec![0.0; problem.intervals.len()];
            if let Some(g) = &problem.constraints {
                g(x, &mut c);
            }
            for &i in &active {
                let (lo, hi) = problem.intervals[i];
                if lo.is_finite() {
                    val += phr(mult_lo[i], lo - c[i], rho);
                }
                if hi.is_finite() {
                    val += phr(mult_hi[i], c[i] - hi, rho);
                }
            }
            val
        };
        let inner = bfgs_box(&lagrangian, &mut x, &problem.lower, &problem.upper, cfg);
        iterations += inner.iterations;

        if let Some(g) = &problem.constraints {
            g(&x, &mut scratch);
        }
        let mut violation = 0.0f64;
        for &i in &active {
            let (lo, hi) = problem.intervals[i];
            violation = violation.max(interval_violation(scratch[i], lo, hi));
            if lo.is_finite() {
                mult_lo[i] = (mult_lo[i] + rho * (lo - scratch[i])).max(0.0);
            }
            if hi.is_finite() {
                mult_hi[i] = (mult_hi[i] + rho * (scratch[i] - hi)).max(0.0);
            }
        }
        let value = problem.objective(&x);
        let settled = (value - prev_value).abs() <= 1e-10 * (1.0 + value.abs());
        if violation <= cfg.feasibility_tol && (active.is_empty() || settled) {
            converged = inner.converged;
            break;
        }
        if violation > 0.25 * prev_violation {
            rho = (rho * cfg.penalty_growth).min(cfg.max_penalty);
        }
        prev_violation = violation;
        prev_value = value;
    }

    let max_violation = problem.max_violation(&x);
    let status = if max_violation > cfg.feasibility_tol {
        MinimizationStatus::Infeasible
    } else if converged {
        MinimizationStatus::Converged
    } else {
        MinimizationStatus::Feasible
    };
    MinimizationResult {
        value: problem.objective(&x),
        x,
        max_violation,
        iterations,
        converged: status == MinimizationStatus::Converged,
        status,
        start_index: 0,
    }
}

struct InnerOutcome {
    iterations: usize,
    converged: bool,
}

/// Finite-difference gradient that never steps outside the box.
fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &mut [f64], fx: f64, lo: &[f64], hi: &[f64], step: f64, g: &mut [f64]) {
    for i in 0..x.len() {
        let xi = x[i];
        let h = step * xi.abs().max(1.0);
        let can_up = xi + h <= hi[i];
        let can_down = xi - h >= lo[i];
        g[i] = match (can_down, can_up) {
            (true, true) => {
                x[i] = xi + h;
                let up = f(x);
                x[i] = xi - h;
                let down = f(x);
                (up - down) / (2.0 * h)
            }
            (false, true) => {
                x[i] = xi + h;
                (f(x) - fx) / h
            }
            (true, false) => {
                x[i] = xi - h;
                (fx - f(x)) / h
            }
            (false, false) => 0.0,
        };
        x[i] = xi;
    }
}

/// Projected BFGS on a box. Variables sitting on a bound with the gradient
/// pointing outward are held fixed for the step.
fn bfgs_box(f: &dyn Fn(&[f64]) -> f64, x: &mut [f64], lo: &[f64], hi: &[f64], cfg: &MinimizerConfig) -> InnerOutcome {
    let n = x.len();
    let mut fx = f(x);
    let mut g = vec![0.0; n];
    fd_gradient(f, x, fx, lo, hi, cfg.fd_step, &mut g);
    let mut h_inv = identity(n);
    let mut stalls = 0;
    let mut d = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for it in 0..cfg.max_inner {
        let blocked: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) || lo[i] == hi[i])
            .collect();
        let pg = (0..n).filter(|&i| !blocked[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg <= cfg.gradient_tol {
            return InnerOutcome { iterations: it, converged: true };
        }

        direction(&h_inv, &g, &blocked, &mut d);
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h_inv = identity(n);
            direction(&h_inv, &g, &blocked, &mut d);
        }

        // projected backtracking (Armijo on the actual displacement)
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = (x[i] + alpha * d[i]).clamp(lo[i], hi[i]);
            }
            let ft = f(&trial);
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            if ft.is_finite() && ft <= fx + 1e-4 * decrease.min(0.0) {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }
        let Some(ft) = accepted else {
            if h_is_identity(&h_inv) {
                return InnerOutcome { iterations: it, converged: false };
            }
            h_inv = identity(n);
            continue;
        };

        fd_gradient(f, &mut trial, ft, lo, hi, cfg.fd_step, &mut g_new);
        let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        if sy > 1e-12 * ss.sqrt() * yy.sqrt() && sy > 0.0 {
            if h_is_identity(&h_inv) {
                let scale = sy / yy;
                for i in 0..n {
                    h_inv[i * n + i] = scale;
                }
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
        }

        let improvement = fx - ft;
        x.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_new);
        fx = ft;
        if improvement <= 1e-15 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                return InnerOutcome { iterations: it + 1, converged: true };
            }
        } else {
            stalls = 0;
        }
    }
    InnerOutcome { iterations: cfg.max_inner, converged: false }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn h_is_identity(h: &[f64]) -> bool {
    let n = (h.len() as f64).sqrt() as usize;
    (0..n).all(|i| (0..n).all(|j| h[i * n + j] == if i == j { 1.0 } else { 0.0 }))
}

fn direction(h: &[f64], g: &[f64], blocked: &[bool], d: &mut [f64]) {
    let n = g.len();
    for i in 0..n {
        d[i] = if blocked[i] {
            0.0
        } else {
            -(0..n).filter(|&j| !blocked[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>()
        };
    }
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Initial points: the anchors (clipped to the box) followed by uniform
/// draws inside `[lower, upper]`. All bounds must be finite.
pub fn multistart_points(lower: &[f64], upper: &[f64], n: usize, seed: u64, anchors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Config("at least one start is required".into()));
    }
    if lower.len() != upper.len() {
        return Err(Error::Config("bound vectors differ in length".into()));
    }
    if lower.iter().chain(upper).any(|b| !b.is_finite()) {
        return Err(Error::Config("sampling box must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vec<f64>> = anchors
        .iter()
        .take(n)
        .map(|a| a.iter().zip(lower.iter().zip(upper)).map(|(&v, (&lo, &hi))| v.clamp(lo, hi)).collect())
        .collect();
    while points.len() < n {
        points.push(
            lower
                .iter()
                .zip(upper)
                .map(|(&lo, &hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
                .collect(),
        );
    }
    Ok(points)
}
