//! Limited-memory BFGS with a strong Wolfe line search (bracketing plus
//! cubic-interpolation zoom, as in Nocedal & Wright, Algorithms 3.5/3.6).
//!
//! Minimizes; callers maximizing a likelihood pass its negation.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub history: usize,
    pub max_iterations: usize,
    /// Stop once `‖∇f‖∞` falls to or below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            max_iterations: 500,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
    NonFiniteStart,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination == Termination::GradientTolerance
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

struct Evaluator<F> {
    f: F,
    count: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Evaluator<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.count += 1;
        (self.f)(x, g)
    }
}

/// Minimizes `f`, which returns the objective and writes its gradient.
pub fn minimize<F>(f: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut ev = Evaluator { f, count: 0 };
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = ev.eval(&x, &mut g);

    let finish = |x: Vec<f64>, fx: f64, g: Vec<f64>, it: usize, ev: usize, t: Termination| Minimum {
        x,
        value: fx,
        gradient: g,
        iterations: it,
        evaluations: ev,
        termination: t,
    };

    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return finish(x, fx, g, 0, ev.count, Termination::NonFiniteStart);
    }
    if inf_norm(&g) <= cfg.grad_tol {
        return finish(x, fx, g, 0, ev.count, Termination::GradientTolerance);
    }

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for iter in 0..cfg.max_iterations {
        two_loop(&memory, &g, &mut dir);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            memory.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = dot(&g, &dir);
        }
        let alpha0 = if memory.is_empty() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };

        let mut step = line_search(&mut ev, &x, fx, slope, &dir, alpha0, cfg, &mut x_new, &mut g_new);
        if step.is_none() && !memory.is_empty() {
            // Retry along steepest descent with a fresh curvature model.
            memory.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = dot(&g, &dir);
            let a0 = (1.0 / inf_norm(&g)).min(1.0);
            step = line_search(&mut ev, &x, fx, slope, &dir, a0, cfg, &mut x_new, &mut g_new);
        }
        let Some(f_new) = step else {
            return finish(x, fx, g, iter, ev.count, Termination::LineSearchFailed);
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if memory.len() == cfg.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }

        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;

        if inf_norm(&g) <= cfg.grad_tol {
            return finish(x, fx, g, iter + 1, ev.count, Termination::GradientTolerance);
        }
    }
    let iters = cfg.max_iterations;
    finish(x, fx, g, iters, ev.count, Termination::MaxIterations)
}

/// `dir = -H g` via the two-loop recursion with scaled identity `H₀`.
fn two_loop(memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64], dir: &mut [f64]) {
    dir.iter_mut().zip(g).for_each(|(d, gi)| *d = -gi);
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, dir);
        dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        dir.iter_mut().for_each(|d| *d *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, dir);
        dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
    }
}

#[derive(Clone, Copy)]
struct Probe {
    alpha: f64,
    value: f64,
    slope: f64,
}

/// Finds a step satisfying the strong Wolfe conditions. On success the
/// accepted point and gradient are left in `x_out` / `g_out`.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    ev: &mut Evaluator<F>,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    alpha0: f64,
    cfg: &LbfgsConfig,
    x_out: &mut [f64],
    g_out: &mut [f64],
) -> Option<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut eval_at = |alpha: f64, x_out: &mut [f64], g_out: &mut [f64]| -> Probe {
        for ((xo, xi), di) in x_out.iter_mut().zip(x).zip(dir) {
            *xo = xi + alpha * di;
        }
        let value = ev.eval(x_out, g_out);
        let slope = dot(g_out, dir);
        if value.is_finite() && slope.is_finite() {
            Probe { alpha, value, slope }
        } else {
            Probe {
                alpha,
                value: f64::INFINITY,
                slope: f64::NAN,
            }
        }
    };

    let armijo = |p: &Probe| p.value <= f0 + cfg.c1 * p.alpha * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -cfg.c2 * slope0;

    let mut prev = Probe {
        alpha: 0.0,
        value: f0,
        slope: slope0,
    };
    let mut alpha = alpha0;
    let mut best: Option<Probe> = None;

    for i in 0..cfg.max_line_search {
        let cur = eval_at(alpha, x_out, g_out);
        if !cur.value.is_finite() {
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if !armijo(&cur) || (i > 0 && cur.value >= prev.value) {
            return zoom(&mut eval_at, prev, cur, armijo, curvature, cfg, x_out, g_out, &mut best);
        }
        if curvature(&cur) {
            return Some(cur.value);
        }
        best = Some(cur);
        if cur.slope >= 0.0 {
            return zoom(&mut eval_at, cur, prev, armijo, curvature, cfg, x_out, g_out, &mut best);
        }
        prev = cur;
        alpha *= 2.0;
    }
    finish_with_best(&mut eval_at, best, x_out, g_out)
}

#[allow(clippy::too_many_arguments)]
fn zoom<E, A, C>(
    eval_at: &mut E,
    mut lo: Probe,
    mut hi: Probe,
    armijo: A,
    curvature: C,
    cfg: &LbfgsConfig,
    x_out: &mut [f64],
    g_out: &mut [f64],
    best: &mut Option<Probe>,
) -> Option<f64>
where
    E: FnMut(f64, &mut [f64], &mut [f64]) -> Probe,
    A: Fn(&Probe) -> bool,
    C: Fn(&Probe) -> bool,
{
    if lo.alpha > 0.0 && best.is_none_or(|b| lo.value < b.value) {
        *best = Some(lo);
    }
    for _ in 0..cfg.max_line_search {
        let width = (hi.alpha - lo.alpha).abs();
        if width <= 1e-16 * lo.alpha.abs().max(hi.alpha.abs()).max(1e-300) {
            break;
        }
        let alpha = interpolate(&lo, &hi);
        let cur = eval_at(alpha, x_out, g_out);
        if !armijo(&cur) || cur.value >= lo.value {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Some(cur.value);
            }
            if best.is_none_or(|b| cur.value < b.value) {
                *best = Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    finish_with_best(eval_at, *best, x_out, g_out)
}

/// Accepts the best sufficient-decrease point seen when the curvature
/// condition could not be met (typically at the limits of precision).
fn finish_with_best<E>(
    eval_at: &mut E,
    best: Option<Probe>,
    x_out: &mut [f64],
    g_out: &mut [f64],
) -> Option<f64>
where
    E: FnMut(f64, &mut [f64], &mut [f64]) -> Probe,
{
    let b = best?;
    let p = eval_at(b.alpha, x_out, g_out);
    Some(p.value)
}

/// Safeguarded cubic interpolation between two probes; falls back to
/// bisection when the cubic is ill-defined.
fn interpolate(lo: &Probe, hi: &Probe) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    let lower = a.min(b);
    let upper = a.max(b);
    let margin = 0.1 * (upper - lower);
    if !hi.value.is_finite() || !hi.slope.is_finite() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let t = b - (b - a) * (hi.slope + d2 - d1) / denom;
    if t.is_finite() && t > lower + margin && t < upper - margin {
        t
    } else {
        mid
    }
}
