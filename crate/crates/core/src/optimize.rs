//! Box-constrained quasi-Newton minimization with numeric gradients.
//!
//! A projected limited-memory BFGS: variables pinned at a bound with the
//! gradient pushing outward are frozen for the step, steps are capped so the
//! iterate stays inside the box, and a strong-Wolfe line search picks the
//! step length. If the line search fails twice in a row the minimizer
//! switches to compass (coordinate) search for a while and then resumes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidConfig("lower bound above upper bound".into()));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Bounds {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    /// Gradient with components that point out of the box at an active bound zeroed.
    pub fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .enumerate()
            .map(|(i, (&xi, &gi))| {
                if (xi <= self.lower[i] && gi > 0.0) || (xi >= self.upper[i] && gi < 0.0) {
                    0.0
                } else {
                    gi
                }
            })
            .collect()
    }

    /// Largest step along `d` from `x` that stays inside the box.
    fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..x.len() {
            if d[i] > 0.0 {
                alpha = alpha.min((self.upper[i] - x[i]) / d[i]);
            } else if d[i] < 0.0 {
                alpha = alpha.min((self.lower[i] - x[i]) / d[i]);
            }
        }
        alpha.max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the projected gradient.
    pub gtol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Relative step of the central differences: `h = rel_step * (1 + |x|)`.
    pub rel_step: f64,
    /// Function evaluations allowed per compass-search fallback.
    pub fallback_evals: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            memory: 10,
            max_iter: 500,
            gtol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
            rel_step: 1e-5,
            fallback_evals: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    /// Max-norm of the projected gradient at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Number of times the compass-search fallback ran.
    pub fallbacks: usize,
}

/// Central-difference gradient with per-coordinate step `rel_step * (1 + |x_i|)`.
pub fn central_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * (1.0 + x[i].abs());
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Evaluator<'a> {
    f: &'a dyn Fn(&[f64]) -> f64,
    rel_step: f64,
    count: usize,
}

impl Evaluator<'_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.count += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        self.count += 2 * x.len();
        let f = self.f;
        let guarded = |p: &[f64]| {
            let v = f(p);
            if v.is_finite() {
                v
            } else {
                f64::NAN
            }
        };
        central_gradient(&guarded, x, self.rel_step)
    }
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Minimizes `f` over the box starting from `x0` (projected into the box).
/// Non-finite objective values are treated as +∞.
pub fn minimize(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], bounds: &Bounds, opts: &MinimizeOptions) -> Result<Minimum> {
    if x0.len() != bounds.len() {
        return Err(Error::DimensionMismatch {
            expected: bounds.len(),
            found: x0.len(),
        });
    }
    let mut eval = Evaluator {
        f,
        rel_step: opts.rel_step,
        count: 0,
    };
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let fx = eval.value(&x);
    if !fx.is_finite() {
        return Err(Error::NoConvergence {
            residual: fx,
            iterations: 0,
        });
    }
    let g = eval.gradient(&x);
    let mut cur = Point { x, f: fx, g };
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut failures = 0;
    let mut fallbacks = 0;
    let mut iterations = 0;

    let finish = |cur: Point, iterations, evaluations, fallbacks| {
        let pg = bounds.projected_gradient(&cur.x, &cur.g);
        let grad_norm = if pg.iter().all(|v| v.is_finite()) {
            max_norm(&pg)
        } else {
            f64::INFINITY
        };
        Minimum {
            x: cur.x,
            f: cur.f,
            grad_norm,
            iterations,
            evaluations,
            converged: grad_norm <= opts.gtol,
            fallbacks,
        }
    };

    while iterations < opts.max_iter {
        let pg = bounds.projected_gradient(&cur.x, &cur.g);
        if !pg.iter().all(|v| v.is_finite()) {
            break;
        }
        if max_norm(&pg) <= opts.gtol {
            break;
        }
        iterations += 1;

        let free: Vec<bool> = pg.iter().zip(&cur.g).map(|(p, g)| *p != 0.0 || *g == 0.0).collect();
        let mut d = two_loop(&cur.g, &memory, &free);
        if dot(&d, &cur.g) >= 0.0 {
            memory.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let alpha_max = bounds.max_step(&cur.x, &d);
        if alpha_max <= 0.0 {
            memory.clear();
            failures += 1;
        } else {
            let alpha0 = if memory.is_empty() {
                (1.0 / max_norm(&d).max(1.0)).min(alpha_max)
            } else {
                alpha_max.min(1.0)
            };
            match line_search(&mut eval, &cur, &d, alpha0, alpha_max, bounds, opts) {
                Some(next) => {
                    failures = 0;
                    let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                        if memory.len() == opts.memory {
                            memory.pop_front();
                        }
                        memory.push_back((s, y, 1.0 / sy));
                    }
                    cur = next;
                    continue;
                }
                None => {
                    memory.clear();
                    failures += 1;
                }
            }
        }
        if failures >= 2 {
            failures = 0;
            fallbacks += 1;
            let before = cur.f;
            let (x, fx) = compass_search(&mut eval, &cur.x, cur.f, bounds, opts.fallback_evals);
            let g = eval.gradient(&x);
            cur = Point { x, f: fx, g };
            if !(fx < before) {
                // Neither method makes progress: the iterate is as good as we can certify.
                break;
            }
        }
    }
    Ok(finish(cur, iterations, eval.count, fallbacks))
}

/// L-BFGS two-loop recursion restricted to the free variables; returns the search direction.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, free: &[bool]) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let s = mask(s);
        let a = rho * dot(&s, &q);
        for (qi, yi) in q.iter_mut().zip(mask(y)) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let yy = dot(y, y);
        if yy > 0.0 {
            let gamma = dot(s, y) / yy;
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(&mask(y), &q);
        for (qi, si) in q.iter_mut().zip(mask(s)) {
            *qi += (a - b) * si;
        }
    }
    mask(&q).into_iter().map(|v| -v).collect()
}

/// Strong-Wolfe line search on `[0, alpha_max]`.
///
/// A step that satisfies sufficient decrease at `alpha_max` is accepted even
/// without the curvature condition, since the box forbids going further.
/// Sufficient decrease tolerates a relative rounding slack in `f`.
fn line_search(
    eval: &mut Evaluator,
    cur: &Point,
    d: &[f64],
    alpha0: f64,
    alpha_max: f64,
    bounds: &Bounds,
    opts: &MinimizeOptions,
) -> Option<Point> {
    let dg0 = dot(&cur.g, d);
    let slack = 4.0 * f64::EPSILON * cur.f.abs();
    let at = |eval: &mut Evaluator, alpha: f64| -> (Vec<f64>, f64) {
        let mut x: Vec<f64> = cur.x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        bounds.project(&mut x);
        let fx = eval.value(&x);
        (x, fx)
    };
    let armijo = |alpha: f64, fx: f64| fx <= cur.f + opts.c1 * alpha * dg0 + slack;
    let curvature = |dga: f64| dga.abs() <= -opts.c2 * dg0;

    let (mut lo_a, mut lo_f, mut lo_dg) = (0.0, cur.f, dg0);
    let mut alpha = alpha0;
    let mut best: Option<Point> = None;
    for i in 0..opts.max_line_search {
        let (x, fx) = at(eval, alpha);
        if !armijo(alpha, fx) || (i > 0 && fx >= lo_f) {
            return zoom(eval, cur, d, (lo_a, lo_f, lo_dg), alpha, fx, bounds, opts, best);
        }
        let g = eval.gradient(&x);
        let dga = dot(&g, d);
        let point = Point { x, f: fx, g };
        if curvature(dga) || alpha >= alpha_max {
            return Some(point);
        }
        if dga >= 0.0 {
            return zoom(eval, cur, d, (alpha, fx, dga), lo_a, lo_f, bounds, opts, Some(point));
        }
        lo_a = alpha;
        lo_f = fx;
        lo_dg = dga;
        best = Some(point);
        alpha = (2.0 * alpha).min(alpha_max);
    }
    best.filter(|p| p.f < cur.f)
}

#[allow(clippy::too_many_arguments)]
fn zoom(
    eval: &mut Evaluator,
    cur: &Point,
    d: &[f64],
    lo: (f64, f64, f64),
    mut hi_a: f64,
    mut hi_f: f64,
    bounds: &Bounds,
    opts: &MinimizeOptions,
    mut best: Option<Point>,
) -> Option<Point> {
    let dg0 = dot(&cur.g, d);
    let slack = 4.0 * f64::EPSILON * cur.f.abs();
    let (mut lo_a, mut lo_f, mut lo_dg) = lo;
    for _ in 0..opts.max_line_search {
        // Quadratic interpolation from (lo_f, lo_dg, hi_f), safeguarded toward bisection.
        let span = hi_a - lo_a;
        let denom = 2.0 * (hi_f - lo_f - lo_dg * span);
        let mut alpha = if denom > 0.0 {
            lo_a - lo_dg * span * span / denom
        } else {
            lo_a + 0.5 * span
        };
        let (a, b) = if lo_a < hi_a { (lo_a, hi_a) } else { (hi_a, lo_a) };
        let margin = 0.1 * (b - a);
        if !(alpha > a + margin && alpha < b - margin) {
            alpha = 0.5 * (a + b);
        }
        if (b - a) < 1e-16 * (1.0 + b.abs()) {
            break;
        }
        let mut x: Vec<f64> = cur.x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        bounds.project(&mut x);
        let fx = eval.value(&x);
        if fx > cur.f + opts.c1 * alpha * dg0 + slack || fx >= lo_f {
            hi_a = alpha;
            hi_f = fx;
            continue;
        }
        let g = eval.gradient(&x);
        let dga = dot(&g, d);
        let point = Point { x, f: fx, g };
        if dga.abs() <= -opts.c2 * dg0 {
            return Some(point);
        }
        if dga * (hi_a - lo_a) >= 0.0 {
            hi_a = lo_a;
            hi_f = lo_f;
        }
        lo_a = alpha;
        lo_f = fx;
        lo_dg = dga;
        best = Some(point);
    }
    best.filter(|p| p.f < cur.f)
}

/// Compass search: polls ± each coordinate, halving the step when no poll improves.
fn compass_search(eval: &mut Evaluator, x0: &[f64], f0: f64, bounds: &Bounds, max_evals: usize) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut step = 0.25;
    let start = eval.count;
    while step > 1e-9 && eval.count - start < max_evals {
        let mut improved = false;
        for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[i] += sign * step * (1.0 + x[i].abs());
                bounds.project(&mut trial);
                if trial[i] == x[i] {
                    continue;
                }
                let ft = eval.value(&trial);
                if ft < fx {
                    x = trial;
                    fx = ft;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}
