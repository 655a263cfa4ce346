//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The line search is the bracketing/zoom scheme of Nocedal and Wright
//! (Algorithms 3.5 and 3.6) with safeguarded cubic interpolation. Optional
//! lower bounds are handled by freezing coordinates that sit on their bound
//! with the search direction pointing outward and by capping the step at the
//! first bound hit.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// A differentiable objective. Errors and non-finite values are treated as
/// `+inf` during the line search.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self(x, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once `||g|| <= grad_tol * ||g0||`.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
    /// `(coordinate, lower bound)` pairs.
    pub lower_bounds: Vec<(usize, f64)>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 200,
            grad_tol: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
            lower_bounds: Vec::new(),
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.memory >= 1
            && self.grad_tol >= 0.0
            && 0.0 < self.c1
            && self.c1 < self.c2
            && self.c2 < 1.0
            && self.max_line_search >= 2;
        if !ok {
            return Err(Error::InvalidParameter(
                "L-BFGS needs memory >= 1, 0 < c1 < c2 < 1 and at least 2 line-search evaluations".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the best point
    /// seen is returned.
    LineSearchFailed,
}

/// Outcome of a minimization. Contains no timing so that identical inputs
/// yield identical reports.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective at the start and after every accepted step.
    pub losses: Vec<f64>,
    pub initial_grad_norm: f64,
    pub grad_norm: f64,
    pub termination: Termination,
}

impl FitReport {
    #[inline]
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    #[inline]
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("losses start with the initial value")
    }

    #[inline]
    pub fn line_search_failed(&self) -> bool {
        self.termination == Termination::LineSearchFailed
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Evaluator<'a, O: Objective> {
    objective: &'a mut O,
    evaluations: usize,
}

impl<O: Objective> Evaluator<'_, O> {
    fn eval(&mut self, x: Vec<f64>) -> Point {
        self.evaluations += 1;
        let mut g = vec![0.0; x.len()];
        let f = match self.objective.evaluate(&x, &mut g) {
            Ok(f) if f.is_finite() && g.iter().all(|v| v.is_finite()) => f,
            _ => f64::INFINITY,
        };
        Point { x, f, g }
    }
}

struct Bounds {
    lower: Vec<f64>,
    any: bool,
}

impl Bounds {
    fn new(n: usize, bounds: &[(usize, f64)]) -> Result<Self> {
        let mut lower = vec![f64::NEG_INFINITY; n];
        for &(i, b) in bounds {
            if i >= n {
                return Err(Error::InvalidParameter("bound index out of range".into()));
            }
            lower[i] = b;
        }
        Ok(Self { lower, any: !bounds.is_empty() })
    }

    fn project(&self, x: &mut [f64]) {
        if self.any {
            for (v, lb) in x.iter_mut().zip(&self.lower) {
                if *v < *lb {
                    *v = *lb;
                }
            }
        }
    }

    /// Gradient with components that would push an active bound outward removed.
    fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(x)
            .zip(&self.lower)
            .map(|((&gi, &xi), &lb)| if xi <= lb && gi > 0.0 { 0.0 } else { gi })
            .collect()
    }

    fn mask_direction(&self, x: &[f64], d: &mut [f64]) {
        if self.any {
            for ((di, &xi), &lb) in d.iter_mut().zip(x).zip(&self.lower) {
                if xi <= lb && *di < 0.0 {
                    *di = 0.0;
                }
            }
        }
    }

    fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        let mut cap = f64::INFINITY;
        if self.any {
            for ((&di, &xi), &lb) in d.iter().zip(x).zip(&self.lower) {
                if di < 0.0 && lb.is_finite() {
                    cap = cap.min((xi - lb) / -di);
                }
            }
        }
        cap
    }
}

/// Minimizes `objective` from `x0`.
pub fn minimize<O: Objective>(objective: &mut O, x0: &[f64], opts: &LbfgsOptions) -> Result<(Vec<f64>, FitReport)> {
    opts.validate()?;
    let n = x0.len();
    let bounds = Bounds::new(n, &opts.lower_bounds)?;
    let mut start = x0.to_vec();
    bounds.project(&mut start);
    let mut ev = Evaluator {
        objective,
        evaluations: 0,
    };
    let mut cur = ev.eval(start);
    if !cur.f.is_finite() {
        return Err(Error::NonFinite);
    }
    let g0 = norm(&bounds.projected_gradient(&cur.x, &cur.g));
    let mut report = FitReport {
        iterations: 0,
        evaluations: 0,
        losses: vec![cur.f],
        initial_grad_norm: g0,
        grad_norm: g0,
        termination: Termination::MaxIterations,
    };
    let threshold = opts.grad_tol * g0;
    if g0 <= threshold {
        report.termination = Termination::GradientTolerance;
        report.evaluations = ev.evaluations;
        return Ok((cur.x, report));
    }

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    while report.iterations < opts.max_iter {
        let mut d = two_loop(&cur.g, &memory);
        bounds.mask_direction(&cur.x, &mut d);
        if dot(&d, &cur.g) >= 0.0 {
            memory.clear();
            d = cur.g.iter().map(|v| -v).collect();
            bounds.mask_direction(&cur.x, &mut d);
            if dot(&d, &cur.g) >= 0.0 {
                report.termination = Termination::GradientTolerance;
                break;
            }
        }
        let alpha_max = bounds.max_step(&cur.x, &d);
        let alpha0 = if memory.is_empty() {
            (1.0 / norm(&d)).min(1.0)
        } else {
            1.0
        }
        .min(alpha_max);

        match line_search(&mut ev, &bounds, &cur, &d, alpha0, alpha_max, opts) {
            Ok(next) => {
                let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
                    if memory.len() == opts.memory {
                        memory.pop_front();
                    }
                    memory.push_back((s, y, 1.0 / sy));
                }
                cur = next;
                report.iterations += 1;
                report.losses.push(cur.f);
                report.grad_norm = norm(&bounds.projected_gradient(&cur.x, &cur.g));
                if report.grad_norm <= threshold {
                    report.termination = Termination::GradientTolerance;
                    break;
                }
            }
            Err(best) => {
                if let Some(best) = best {
                    cur = best;
                    report.iterations += 1;
                    report.losses.push(cur.f);
                    report.grad_norm = norm(&bounds.projected_gradient(&cur.x, &cur.g));
                }
                report.termination = Termination::LineSearchFailed;
                log::warn!("line search failed after {} iterations", report.iterations);
                break;
            }
        }
    }
    report.evaluations = ev.evaluations;
    Ok((cur.x, report))
}

/// `-H g` by the two-loop recursion with the usual `s'y / y'y` scaling.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Trial {
    alpha: f64,
    point: Point,
    slope: f64,
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, or `None`.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = math::sqrt(disc) * if b > a { 1.0 } else { -1.0 };
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn line_search<O: Objective>(
    ev: &mut Evaluator<'_, O>,
    bounds: &Bounds,
    cur: &Point,
    d: &[f64],
    alpha0: f64,
    alpha_max: f64,
    opts: &LbfgsOptions,
) -> core::result::Result<Point, Option<Point>> {
    let f0 = cur.f;
    let d0 = dot(&cur.g, d);
    let mut budget = opts.max_line_search;
    let mut best: Option<Point> = None;

    let probe = |ev: &mut Evaluator<'_, O>, alpha: f64, best: &mut Option<Point>| -> Trial {
        let mut x: Vec<f64> = cur.x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        bounds.project(&mut x);
        let point = ev.eval(x);
        let slope = if point.f.is_finite() { dot(&point.g, d) } else { f64::NAN };
        if point.f < f0 && best.as_ref().is_none_or(|b| point.f < b.f) {
            *best = Some(Point {
                x: point.x.clone(),
                f: point.f,
                g: point.g.clone(),
            });
        }
        Trial { alpha, point, slope }
    };
    let armijo = |t: &Trial| t.point.f <= f0 + opts.c1 * t.alpha * d0;
    let curvature = |t: &Trial| t.slope.abs() <= -opts.c2 * d0;

    let mut prev = Trial {
        alpha: 0.0,
        point: Point {
            x: cur.x.clone(),
            f: f0,
            g: cur.g.clone(),
        },
        slope: d0,
    };
    let mut alpha = alpha0;
    let mut first = true;
    let (mut lo, mut hi) = loop {
        if budget == 0 {
            return Err(best);
        }
        budget -= 1;
        let t = probe(ev, alpha, &mut best);
        if !armijo(&t) || (!first && t.point.f >= prev.point.f) {
            break (prev, t);
        }
        if curvature(&t) {
            return Ok(t.point);
        }
        if t.slope >= 0.0 {
            break (t, prev);
        }
        if alpha >= alpha_max {
            // Hit a bound while still descending: accept the sufficient decrease.
            return Ok(t.point);
        }
        first = false;
        alpha = (2.0 * alpha).min(alpha_max);
        prev = t;
    };

    // Zoom: `lo` satisfies Armijo with the lowest value so far; the bracket
    // [lo, hi] contains a strong-Wolfe point.
    loop {
        if budget == 0 {
            return Err(best);
        }
        budget -= 1;
        let (a, b) = (lo.alpha, hi.alpha);
        let width = (b - a).abs();
        if width <= 1e-16 * a.abs().max(1.0) {
            return Err(best);
        }
        let lo_end = a.min(b) + 0.1 * width;
        let hi_end = a.max(b) - 0.1 * width;
        let mut trial_alpha = 0.5 * (a + b);
        if hi.point.f.is_finite() && hi.slope.is_finite() {
            if let Some(c) = cubic_min(a, lo.point.f, lo.slope, b, hi.point.f, hi.slope) {
                trial_alpha = c.clamp(lo_end, hi_end);
            }
        }
        let t = probe(ev, trial_alpha, &mut best);
        if !armijo(&t) || t.point.f >= lo.point.f {
            hi = t;
        } else {
            if curvature(&t) {
                return Ok(t.point);
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
}
