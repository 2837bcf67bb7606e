//! Adaptive integration over the depth variable `s`.
//!
//! Slices shrink to a point at both ends of a ball. At the pole the
//! integrand may blow up like a power of `s`, so that end is covered by
//! dyadic cells in `log s`. At the bottom the slice radius behaves like
//! `√(s_max - s)`, which `s = s_max - w²` turns smooth. Every cell is
//! then refined globally, worst first, by comparing a 16-point
//! Gauss–Legendre value on the cell with the sum over its two halves.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::gauss::{gauss_legendre, Rule};

/// Value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    /// False when the evaluation budget ran out first or the integral
    /// diverges at a pole.
    pub converged: bool,
    pub evaluations: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, error: 0.0, converged: true, evaluations: 0 }
    }

    pub fn scale(self, s: f64) -> Self {
        Self { value: self.value * s, error: self.error * s.abs(), ..self }
    }

    pub fn add(self, other: Self) -> Self {
        Self {
            value: self.value + other.value,
            error: self.error + other.error,
            converged: self.converged && other.converged,
            evaluations: self.evaluations + other.evaluations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeRule {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_evals: usize,
    /// Maximum number of dyadic cells toward a pole.
    pub endpoint_refinement: usize,
}

impl Default for TimeRule {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-14, max_evals: 400_000, endpoint_refinement: 160 }
    }
}

/// Interval `(lo, hi)` in `s` with its endpoint behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSpan {
    pub lo: f64,
    pub hi: f64,
    /// Integrand may be singular (integrably) at `lo`.
    pub pole_at_lo: bool,
    /// Square-root behaviour at `hi`.
    pub sqrt_at_hi: bool,
    /// Interior points where the integrand is not smooth.
    pub breakpoints: Vec<f64>,
}

impl TimeSpan {
    pub fn ball(s_max: f64) -> Self {
        Self { lo: 0.0, hi: s_max, pole_at_lo: true, sqrt_at_hi: true, breakpoints: Vec::new() }
    }

    pub fn plain(lo: f64, hi: f64) -> Self {
        Self { lo, hi, pole_at_lo: false, sqrt_at_hi: false, breakpoints: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Map {
    Linear,
    /// `s = origin + e^y`.
    Log { origin: f64 },
    /// `s = top - w²`.
    Sqrt { top: f64 },
}

impl Map {
    #[inline]
    fn point(&self, y: f64) -> (f64, f64) {
        match *self {
            Map::Linear => (y, 1.0),
            Map::Log { origin } => {
                let e = y.exp();
                (origin + e, e)
            }
            Map::Sqrt { top } => (top - y * y, 2.0 * y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Part {
    value: f64,
    inner: f64,
}

#[derive(Debug, Clone)]
struct Cell {
    map: Map,
    a: f64,
    b: f64,
    whole: Part,
    left: Part,
    right: Part,
}

impl Cell {
    fn value(&self) -> f64 {
        self.left.value + self.right.value
    }

    fn time_error(&self) -> f64 {
        (self.whole.value - self.value()).abs()
    }

    fn inner_error(&self) -> f64 {
        self.left.inner + self.right.inner
    }
}

struct Ranked {
    err: f64,
    idx: usize,
}

impl PartialEq for Ranked {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Ranked {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err).then(o.idx.cmp(&self.idx))
    }
}

#[derive(Debug, Clone)]
pub struct TimeIntegrator {
    rule: TimeRule,
    gl: Rule,
}

impl TimeIntegrator {
    pub fn new(rule: TimeRule) -> Self {
        Self { rule, gl: gauss_legendre(16) }
    }

    pub fn rule(&self) -> &TimeRule {
        &self.rule
    }

    fn part<F: Fn(f64) -> (f64, f64)>(&self, f: &F, map: Map, a: f64, b: f64, evals: &mut usize) -> Part {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        let (mut value, mut inner) = (0.0, 0.0);
        for (x, w) in self.gl.nodes.iter().zip(&self.gl.weights) {
            let (s, jac) = map.point(m + h * x);
            let (v, e) = f(s);
            value += w * jac * v;
            inner += w * jac.abs() * e.abs();
        }
        *evals += self.gl.len();
        Part { value: value * h, inner: inner * h.abs() }
    }

    fn cell<F: Fn(f64) -> (f64, f64)>(&self, f: &F, map: Map, a: f64, b: f64, whole: Option<Part>, evals: &mut usize) -> Cell {
        let m = 0.5 * (a + b);
        let whole = whole.unwrap_or_else(|| self.part(f, map, a, b, evals));
        let left = self.part(f, map, a, m, evals);
        let right = self.part(f, map, m, b, evals);
        Cell { map, a, b, whole, left, right }
    }

    /// `∫_lo^hi f(s) ds`; `f` returns a value and its own error estimate.
    pub fn integrate<F: Fn(f64) -> (f64, f64)>(&self, f: F, span: &TimeSpan) -> Estimate {
        let (lo, hi) = (span.lo, span.hi);
        if !(hi > lo) {
            return Estimate::exact(0.0);
        }
        let mut evals = 0usize;
        let mut pts: Vec<f64> = span.breakpoints.iter().copied().filter(|&b| b > lo && b < hi).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut knots = vec![lo];
        knots.extend(pts);
        knots.push(hi);

        let mut cells: Vec<Cell> = Vec::new();
        let nseg = knots.len() - 1;
        let mut pole: Option<(f64, f64)> = None;
        for k in 0..nseg {
            let (mut a, b) = (knots[k], knots[k + 1]);
            let pole_here = k == 0 && span.pole_at_lo;
            let sqrt_here = k == nseg - 1 && span.sqrt_at_hi;
            let mid = 0.5 * (a + b);
            if pole_here {
                pole = Some((a, mid));
                a = mid;
            }
            if sqrt_here {
                let from = if pole_here { a } else { mid };
                if from > a {
                    cells.push(self.cell(&f, Map::Linear, a, from, None, &mut evals));
                }
                let w = (b - from).sqrt();
                cells.push(self.cell(&f, Map::Sqrt { top: b }, 0.0, w, None, &mut evals));
            } else if b > a {
                cells.push(self.cell(&f, Map::Linear, a, b, None, &mut evals));
            }
        }

        let mut tail = (0.0, 0.0);
        if let Some((o, top)) = pole {
            let base: f64 = cells.iter().map(Cell::value).sum();
            tail = self.pole_cells(&f, o, top, base, &mut cells, &mut evals);
            if tail.1.is_infinite() {
                // divergent or unresolved at the pole; report the partial sum
                let value: f64 = cells.iter().map(Cell::value).sum();
                return Estimate { value, error: value.abs(), converged: false, evaluations: evals };
            }
        }

        let mut heap: BinaryHeap<Ranked> = cells.iter().enumerate().map(|(idx, c)| Ranked { err: c.time_error(), idx }).collect();
        let total = |cells: &[Cell]| -> (f64, f64) {
            let v: f64 = cells.iter().map(Cell::value).sum();
            let e: f64 = cells.iter().map(Cell::time_error).sum();
            (v, e)
        };
        let (mut value, mut err) = total(&cells);
        value += tail.0;
        err += tail.1;
        let mut converged = true;
        let mut iter = 0usize;
        while err > self.rule.abs_tol.max(self.rule.rel_tol * value.abs()) {
            if evals + 64 > self.rule.max_evals {
                converged = false;
                break;
            }
            let Some(top) = heap.pop() else { break };
            let c = cells[top.idx].clone();
            let m = 0.5 * (c.a + c.b);
            if !(m > c.a && m < c.b) {
                continue;
            }
            let l = self.cell(&f, c.map, c.a, m, Some(c.left), &mut evals);
            let r = self.cell(&f, c.map, m, c.b, Some(c.right), &mut evals);
            value += l.value() + r.value() - c.value();
            err += l.time_error() + r.time_error() - c.time_error();
            cells[top.idx] = l;
            heap.push(Ranked { err: cells[top.idx].time_error(), idx: top.idx });
            cells.push(r);
            heap.push(Ranked { err: cells.last().unwrap().time_error(), idx: cells.len() - 1 });
            iter += 1;
            // resum now and then so the running totals do not drift
            if iter % 64 == 0 {
                let (v, e) = total(&cells);
                value = v + tail.0;
                err = e + tail.1;
            }
        }
        let (v, e) = total(&cells);
        let inner: f64 = cells.iter().map(Cell::inner_error).sum();
        let value = v + tail.0;
        let error = e + tail.1 + inner;
        if err > self.rule.abs_tol.max(self.rule.rel_tol * value.abs()) {
            converged = false;
        }
        Estimate { value, error, converged, evaluations: evals }
    }

    /// Dyadic cells `[o + L/2^{k+1}, o + L/2^k]` until they stop mattering.
    /// Returns the geometric tail estimate `(value, error)` below the last
    /// cell, with an infinite error when the pole cannot be resolved.
    fn pole_cells<F: Fn(f64) -> (f64, f64)>(
        &self,
        f: &F,
        o: f64,
        top: f64,
        base: f64,
        cells: &mut Vec<Cell>,
        evals: &mut usize,
    ) -> (f64, f64) {
        let len = top - o;
        if !(len > 0.0) {
            return (0.0, 0.0);
        }
        let map = Map::Log { origin: o };
        let ln2 = std::f64::consts::LN_2;
        let mut y_hi = len.ln();
        let mut acc = base;
        let mut quiet = 0;
        let mut history: Vec<f64> = Vec::new();
        for _ in 0..self.rule.endpoint_refinement.max(4) {
            let y_lo = y_hi - ln2;
            let c = self.cell(f, map, y_lo, y_hi, None, evals);
            let v = c.value();
            if !v.is_finite() {
                break;
            }
            acc += v;
            history.push(v);
            cells.push(c);
            y_hi = y_lo;
            if diverging(&history) || stalled(&history) {
                return (0.0, f64::INFINITY);
            }
            let scale = self.rule.abs_tol.max(self.rule.rel_tol * acc.abs());
            if v.abs() < 0.1 * scale {
                quiet += 1;
                if quiet >= 3 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        let k = history.len();
        if k < 2 {
            return (0.0, history.last().copied().unwrap_or(0.0).abs());
        }
        let (last, prev) = (history[k - 1], history[k - 2]);
        let q = if prev != 0.0 { (last / prev).abs() } else { 0.0 };
        if q < 0.95 {
            let t = last * q / (1.0 - q);
            (t, t.abs())
        } else {
            // no geometric decay: nothing left to refine
            (0.0, f64::INFINITY)
        }
    }
}

/// A dozen growing dyadic cells whose growth is not slowing down: a
/// power-law pole `s^{-1-ε}`. Log factors make convergent integrands grow
/// for a while too, but then the ratios decrease.
fn diverging(history: &[f64]) -> bool {
    const RUN: usize = 12;
    let k = history.len();
    if k < RUN + 1 {
        return false;
    }
    let w = &history[k - RUN - 1..];
    if w.iter().any(|v| *v == 0.0) {
        return false;
    }
    let ratios: Vec<f64> = w.windows(2).map(|p| (p[1] / p[0]).abs()).collect();
    ratios.iter().all(|&r| r >= 1.0 - 1e-3) && ratios.windows(2).all(|q| q[1] >= q[0] * (1.0 - 1e-6))
}

/// Deep in the pole the cells of a convergent integrand eventually
/// shrink; a flat or growing run, as from `ln(1/s)/s`, means the integral
/// diverges like a power of `ln`. Slow decay such as `s^{-1/2} ln(1/s)^6`
/// is not flagged.
fn stalled(history: &[f64]) -> bool {
    const START: usize = 24;
    const SPAN: usize = 8;
    let k = history.len();
    k >= START && history[k - 1].abs() >= 0.99 * history[k - 1 - SPAN].abs() && history[k - 1] != 0.0
}
