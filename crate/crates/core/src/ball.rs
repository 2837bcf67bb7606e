//! Level-set balls `Ω_r(z0) = { z : Γ(z0, z) > 1/r }`.
//!
//! A ball lives strictly below its centre in time, on `t0 - s_max < t < t0`,
//! and its section at time `t0 - s` is the ellipsoid
//!
//! ```text
//! <E(s)^T C(s)^{-1} E(s) (x - c(s)), x - c(s)> < ρ(s),
//! ρ(s) = 4 log( r (4π)^{-n/2} det C(s)^{-1/2} ),   c(s) = E(-s) x0.
//! ```
//!
//! Balls are built at the origin and moved by left translation, which is
//! exact because `Γ` is left invariant.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::covariance::ScalarPolynomial;
use crate::fundamental::GammaEvaluator;
use crate::operator::{GroupPoint, OperatorError};
use crate::quadrature::gauss::unit_ball_volume;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BallError {
    #[error("radius must be positive and finite, got {0}")]
    NonPositiveRadius(f64),
    #[error("failed to bracket the temporal extent (target {0:e})")]
    RootNotBracketed(f64),
    #[error("slice parameter {s} outside (0, {s_max})")]
    SliceOutOfRange { s: f64, s_max: f64 },
    #[error("shape matrix is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// `{ x : <M (x - c), x - c> < ρ }` with `M` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
    level: f64,
    /// `T` with `x = c + T u` mapping the unit ball onto the ellipsoid.
    frame: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>, level: f64) -> Result<Self, BallError> {
        if !(level > 0.0) {
            return Err(BallError::SliceOutOfRange { s: level, s_max: f64::INFINITY });
        }
        let chol = shape.clone().cholesky().ok_or(BallError::NotPositiveDefinite)?;
        // M = R R^T  =>  x - c = √ρ R^{-T} u
        let r_t = chol.l().transpose();
        let inv = r_t
            .try_inverse()
            .ok_or(BallError::NotPositiveDefinite)?;
        let frame = inv * level.sqrt();
        Ok(Self { center, shape, level, frame })
    }

    /// Builds an ellipsoid whose unit-ball frame is already known.
    pub(crate) fn with_frame(
        center: DVector<f64>,
        shape: DMatrix<f64>,
        level: f64,
        frame: DMatrix<f64>,
    ) -> Self {
        Self { center, shape, level, frame }
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `<M (x - c), x - c>`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            let di = x[i] - self.center[i];
            let mut row = 0.0;
            for j in 0..n {
                row += self.shape[(i, j)] * (x[j] - self.center[j]);
            }
            acc += di * row;
        }
        acc
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.quad(x) < self.level
    }

    pub fn volume(&self) -> f64 {
        unit_ball_volume(self.dim()) * self.level.powf(self.dim() as f64 / 2.0)
            / self.shape.determinant().sqrt()
    }

    /// Same shape and centre, level multiplied by `factor`.
    pub fn scaled_level(&self, factor: f64) -> Self {
        let frame = &self.frame * factor.sqrt();
        Self::with_frame(self.center.clone(), self.shape.clone(), self.level * factor, frame)
    }

    pub fn translated(&self, h: &DVector<f64>) -> Self {
        Self::with_frame(&self.center + h, self.shape.clone(), self.level, self.frame.clone())
    }

    /// Parameter interval `{ τ ≥ 0 : p + τ v inside }`, or `None`.
    pub fn ray_interval(&self, p: &[f64], v: &[f64]) -> Option<(f64, f64)> {
        let (r1, r2) = self.line_interval(p, v)?;
        let lo = r1.max(0.0);
        if r2 <= lo {
            None
        } else {
            Some((lo, r2))
        }
    }

    /// `{ τ ∈ ℝ : p + τ v inside }`.
    pub fn line_interval(&self, p: &[f64], v: &[f64]) -> Option<(f64, f64)> {
        let n = self.dim();
        let (mut a, mut b, mut c0) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let di = p[i] - self.center[i];
            let (mut mv, mut md) = (0.0, 0.0);
            for j in 0..n {
                mv += self.shape[(i, j)] * v[j];
                md += self.shape[(i, j)] * (p[j] - self.center[j]);
            }
            a += v[i] * mv;
            b += v[i] * md;
            c0 += di * md;
        }
        let disc = b * b - a * (c0 - self.level);
        if disc <= 0.0 || a <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // stable roots of a τ² + 2 b τ + (c0 - ρ)
        let q = -(b + b.signum() * sq);
        let (r1, r2) = if q == 0.0 {
            (-sq / a, sq / a)
        } else {
            let x1 = q / a;
            let x2 = (c0 - self.level) / q;
            if x1 < x2 { (x1, x2) } else { (x2, x1) }
        };
        Some((r1, r2))
    }
}

/// Three-way classification near the level set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Inside,
    Outside,
    /// Within `1e-12 / r` of the level `1/r`.
    Boundary,
}

/// Axis-aligned box in `R^{n+1}`; the last coordinate is time.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl BoundingBox {
    pub fn contains(&self, z: &GroupPoint) -> bool {
        let n = z.dim();
        (0..n).all(|i| z.x[i] >= self.lo[i] && z.x[i] <= self.hi[i]) && z.t >= self.lo[n] && z.t <= self.hi[n]
    }

    pub fn volume(&self) -> f64 {
        (&self.hi - &self.lo).iter().product()
    }

    pub fn diameter(&self) -> f64 {
        (&self.hi - &self.lo).norm()
    }

    pub fn union(&self, other: &Self) -> Self {
        Self { lo: self.lo.inf(&other.lo), hi: self.hi.sup(&other.hi) }
    }
}

const BOUNDARY_BAND: f64 = 1e-12;

/// The ball `Ω_r(z0)` of one operator.
#[derive(Debug, Clone)]
pub struct LBall {
    ev: Arc<GammaEvaluator>,
    z0: GroupPoint,
    r: f64,
    s_max: f64,
    log_det_target: f64,
}

/// Unique `s > 0` with `det C(s) = r² (4π)^{-n}`.
///
/// Bisection until the bracket is tight, then safeguarded Newton on the
/// polynomial; `det C` is increasing from `0` on `(0, ∞)`.
pub fn ball_time_extent(r: f64, ev: &GammaEvaluator) -> Result<f64, BallError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(BallError::NonPositiveRadius(r));
    }
    let n = ev.n() as f64;
    let target = r * r * (4.0 * PI).powf(-n);
    monotone_root(ev.model().det(), target)
}

fn monotone_root(p: &ScalarPolynomial, target: f64) -> Result<f64, BallError> {
    let f = |s: f64| p.eval(s) - target;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut tries = 0;
    while f(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        tries += 1;
        if tries > 2000 || !hi.is_finite() {
            return Err(BallError::RootNotBracketed(target));
        }
    }
    // shrink from below as well so tiny targets get a relative bracket
    while lo == 0.0 {
        let mid = 0.5 * hi;
        if mid == 0.0 {
            return Err(BallError::RootNotBracketed(target));
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    while (hi - lo) > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let dp = p.derivative();
    let mut s = 0.5 * (lo + hi);
    for _ in 0..100 {
        let fs = f(s);
        if fs > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let d = dp.eval(s);
        let mut next = if d > 0.0 { s - fs / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - s).abs() <= 1e-15 * s;
        s = next;
        if done || hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(s)
}

impl LBall {
    pub fn new(ev: Arc<GammaEvaluator>, z0: GroupPoint, r: f64) -> Result<Self, BallError> {
        let s_max = ball_time_extent(r, &ev)?;
        let n = ev.n() as f64;
        let log_det_target = 2.0 * r.ln() - n * (4.0 * PI).ln();
        Ok(Self { ev, z0, r, s_max, log_det_target })
    }

    pub fn at_origin(ev: Arc<GammaEvaluator>, r: f64) -> Result<Self, BallError> {
        let n = ev.n();
        Self::new(ev, GroupPoint::origin(n), r)
    }

    pub fn evaluator(&self) -> &Arc<GammaEvaluator> {
        &self.ev
    }

    pub fn z0(&self) -> &GroupPoint {
        &self.z0
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Temporal depth: the ball occupies `t0 - s_max < t < t0`.
    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn n(&self) -> usize {
        self.ev.n()
    }

    /// `ρ(s)`; positive exactly on `(0, s_max)`.
    pub fn level(&self, s: f64) -> f64 {
        2.0 * (self.log_det_target - self.ev.model().det().eval(s).ln())
    }

    /// Slice centre `E(-s) x0`.
    pub fn slice_center(&self, s: f64) -> DVector<f64> {
        self.ev.model().exp().eval(-s) * &self.z0.x
    }

    /// Section at time `t0 - s`, in absolute spatial coordinates.
    pub fn slice(&self, s: f64) -> Result<Ellipsoid, BallError> {
        if !(s > 0.0 && s < self.s_max) {
            return Err(BallError::SliceOutOfRange { s, s_max: self.s_max });
        }
        let level = self.level(s);
        if !(level > 0.0) {
            return Err(BallError::SliceOutOfRange { s, s_max: self.s_max });
        }
        let model = self.ev.model();
        let e = model.exp().eval(s);
        let e_inv = model.exp().eval(-s);
        let c = model.covariance_at(s);
        let chol = c.clone().cholesky().ok_or(BallError::NotPositiveDefinite)?;
        let c_inv = chol.inverse();
        let shape = e.transpose() * c_inv * &e;
        let shape = (&shape + shape.transpose()) * 0.5;
        let frame = e_inv * chol.l() * level.sqrt();
        Ok(Ellipsoid::with_frame(&e_inv_times(&self.ev, s) * &self.z0.x, shape, level, frame))
    }

    /// `ω_n ρ(s)^{n/2} det C(s)^{1/2}`, zero outside `(0, s_max)`.
    pub fn slice_volume(&self, s: f64) -> f64 {
        if !(s > 0.0 && s < self.s_max) {
            return 0.0;
        }
        let level = self.level(s).max(0.0);
        let n = self.n() as f64;
        unit_ball_volume(self.n()) * level.powf(n / 2.0) * self.ev.model().det().eval(s).sqrt()
    }

    pub fn classify(&self, z: &GroupPoint) -> Membership {
        let g = self.ev.gamma(&self.z0, z);
        let inv_r = 1.0 / self.r;
        if (g - inv_r).abs() < BOUNDARY_BAND * inv_r {
            Membership::Boundary
        } else if g > inv_r {
            Membership::Inside
        } else {
            Membership::Outside
        }
    }

    /// Direct test `Γ(z0, z) > 1/r`.
    pub fn contains(&self, z: &GroupPoint) -> bool {
        self.classify(z) == Membership::Inside
    }

    /// Membership through the ellipsoidal section at `z`'s time.
    pub fn contains_by_slice(&self, z: &GroupPoint) -> bool {
        let s = self.z0.t - z.t;
        match self.slice(s) {
            Ok(e) => e.contains(z.x.as_slice()),
            Err(_) => false,
        }
    }

    /// Ellipsoidal half-width along axis `i` at depth `s`: `√(ρ (M^{-1})_{ii})`.
    fn half_width(&self, s: f64, i: usize) -> f64 {
        let level = self.level(s);
        if !(level > 0.0) {
            return 0.0;
        }
        let model = self.ev.model();
        let e_inv = model.exp().eval(-s);
        let m_inv = &e_inv * model.covariance_at(s) * e_inv.transpose();
        (level * m_inv[(i, i)]).sqrt()
    }

    /// Axis-aligned box containing the ball, from a sampled-then-refined
    /// optimisation of each slice extent over `s`.
    pub fn bounding_box(&self) -> BoundingBox {
        let n = self.n();
        let mut lo = DVector::zeros(n + 1);
        let mut hi = DVector::zeros(n + 1);
        for i in 0..n {
            let upper = |s: f64| self.slice_center(s)[i] + self.half_width(s, i);
            let lower = |s: f64| -(self.slice_center(s)[i] - self.half_width(s, i));
            hi[i] = maximize_on(&upper, self.s_max);
            lo[i] = -maximize_on(&lower, self.s_max);
            let pad = 1e-9 * (hi[i] - lo[i]).abs().max(f64::MIN_POSITIVE);
            hi[i] += pad;
            lo[i] -= pad;
        }
        lo[n] = self.z0.t - self.s_max;
        hi[n] = self.z0.t;
        BoundingBox { lo, hi }
    }

    /// `Ω_r(w ∘ z0) = w ∘ Ω_r(z0)`; built by moving the centre.
    pub fn translate(&self, w: &GroupPoint) -> Self {
        let z0 = self.ev.spec().compose(w, &self.z0);
        Self { z0, ..self.clone() }
    }

    /// Ball at a new centre with the same radius.
    pub fn recentered(&self, z0: GroupPoint) -> Self {
        Self { z0, ..self.clone() }
    }

    /// `δ_λ(Ω_r(z0)) = Ω_{λ^{Q-2} r}(δ_λ z0)`.
    pub fn dilate(&self, lambda: f64) -> Result<Self, BallError> {
        let z0 = self.ev.spec().dilate(lambda, &self.z0)?;
        let q = self.ev.spec().homogeneous_dimension() as i32;
        Self::new(self.ev.clone(), z0, lambda.powi(q - 2) * self.r)
    }

    /// Same centre, different radius.
    pub fn with_radius(&self, r: f64) -> Result<Self, BallError> {
        Self::new(self.ev.clone(), self.z0.clone(), r)
    }

    /// CSV table of `count` slices: `s, t, c_1..c_n, m_11..m_nn, rho`.
    pub fn slices_csv(&self, count: usize) -> String {
        let n = self.n();
        let mut out = String::from("s,t");
        for i in 0..n {
            let _ = write!(out, ",c{}", i + 1);
        }
        for i in 0..n {
            for j in 0..n {
                let _ = write!(out, ",m{}{}", i + 1, j + 1);
            }
        }
        out.push_str(",rho\n");
        for k in 1..=count {
            let s = self.s_max * k as f64 / (count + 1) as f64;
            let Ok(e) = self.slice(s) else { continue };
            let _ = write!(out, "{s:e},{:e}", self.z0.t - s);
            for v in e.center().iter() {
                let _ = write!(out, ",{v:e}");
            }
            for i in 0..n {
                for j in 0..n {
                    let _ = write!(out, ",{:e}", e.shape()[(i, j)]);
                }
            }
            let _ = writeln!(out, ",{:e}", e.level());
        }
        out
    }
}

fn e_inv_times(ev: &GammaEvaluator, s: f64) -> DMatrix<f64> {
    ev.model().exp().eval(-s)
}

/// Maximum of `f` on `(0, s_max)`: dense sampling, then golden-section
/// refinement around the best sample.
pub(crate) fn maximize_on(f: &dyn Fn(f64) -> f64, s_max: f64) -> f64 {
    const SAMPLES: usize = 256;
    let h = s_max / SAMPLES as f64;
    let (mut best_k, mut best) = (1, f64::NEG_INFINITY);
    for k in 1..SAMPLES {
        let v = f(k as f64 * h);
        if v > best {
            best = v;
            best_k = k;
        }
    }
    let (mut a, mut b) = ((best_k as f64 - 1.0) * h, ((best_k as f64 + 1.0) * h).min(s_max));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    best.max(fc).max(fd)
}
