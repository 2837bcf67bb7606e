//! Γ-potentials of balls and perturbed balls.
//!
//! For a bounded domain `D` and a reference ball `Ω_r(z0)` the measure
//! `dν = r⁻¹ 1_D W(z0⁻¹∘ζ) dζ` has potential
//! `Γ_ν(z) = r⁻¹ ∫_D Γ(ζ, z) W(z0⁻¹∘ζ) dζ`. When `D = Ω_r(z0)` it equals
//! `Γ(z0, z)` off the ball and is strictly smaller inside. The routines
//! here evaluate both sides of that identity, the integrability quantity
//! `‖(1_D − 1_Ω) W‖_p`, and the one-sided test used for domains that
//! reach above `t0`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ball::{BallError, BoundingBox, Ellipsoid, LBall};
use crate::fundamental::GammaEvaluator;
use crate::harmonic::AnisoPolynomial;
use crate::operator::GroupPoint;
use crate::quadrature::mc::{chunk_rng, unit_ball_point, CHUNK};
use crate::quadrature::moments::{ellipsoid_polynomial_integral, MonomialMoments, SpatialPolynomial};
use crate::quadrature::slice::{gauss_quadratic_on_region, polar_on_region, AngularRules, GaussQuadratic, SliceRegion};
use crate::quadrature::{integrate_over_ball, BallIntegrand, Estimate, QuadratureConfig, TimeSpan};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error("test point {0} lies inside the domain")]
    TestPointInsideDomain(usize),
    #[error("point {0} is not strictly inside the ball")]
    PointNotInterior(usize),
    #[error("the domain has no mass above t0")]
    NoFutureMass,
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error(transparent)]
    Ball(#[from] BallError),
}

/// Ways of deforming the reference ball slice by slice.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// Slice level `ρ f(s)²` with `f = 1 + m sin⁴(π s / s_max)`.
    SliceScale { magnitude: f64 },
    /// Every slice moved by the constant vector `h`.
    SpatialShift { h: DVector<f64> },
    /// The ball of radius `r'` about the same centre.
    RadiusMismatch { r_prime: f64 },
    /// Slices with `0.3 s_max ≤ s ≤ 0.7 s_max` lose an inner ellipsoid of
    /// relative size `radius`, offset by `(1 - radius)/2` along the first
    /// frame axis.
    Bite { radius: f64 },
    /// The whole ball moved by `dt` in time.
    TimeShift { dt: f64 },
}

#[derive(Clone)]
enum Kind {
    Ball,
    Perturbed(Perturbation),
    Indicator { member: Arc<dyn Fn(&GroupPoint) -> bool + Send + Sync>, bbox: BoundingBox },
}

/// A bounded domain compared against a reference ball `Ω_r(z0)`.
#[derive(Clone)]
pub struct SlicedDomain {
    reference: LBall,
    body: LBall,
    kind: Kind,
}

const BITE_WINDOW: (f64, f64) = (0.3, 0.7);

impl SlicedDomain {
    pub fn exact(ball: LBall) -> Self {
        Self { body: ball.clone(), reference: ball, kind: Kind::Ball }
    }

    pub fn perturbed(ball: LBall, p: Perturbation) -> Result<Self, PotentialError> {
        let body = match &p {
            Perturbation::RadiusMismatch { r_prime } => ball.with_radius(*r_prime)?,
            Perturbation::TimeShift { dt } => {
                let z = ball.z0();
                ball.recentered(GroupPoint::new(z.x.clone(), z.t + dt))
            }
            Perturbation::SliceScale { magnitude } if !(*magnitude > -1.0) => {
                return Err(PotentialError::InvalidPerturbation("slice scale must exceed -1".into()));
            }
            Perturbation::Bite { radius } if !(*radius > 0.0 && *radius < 1.0 / 3.0) => {
                return Err(PotentialError::InvalidPerturbation("bite radius must lie in (0, 1/3)".into()));
            }
            Perturbation::SpatialShift { h } if h.len() != ball.n() => {
                return Err(PotentialError::InvalidPerturbation("shift has the wrong dimension".into()));
            }
            _ => ball.clone(),
        };
        Ok(Self { reference: ball, body, kind: Kind::Perturbed(p) })
    }

    /// Domain given only by a membership test inside `bbox`; Monte Carlo only.
    pub fn indicator(ball: LBall, member: Arc<dyn Fn(&GroupPoint) -> bool + Send + Sync>, bbox: BoundingBox) -> Self {
        Self { body: ball.clone(), reference: ball, kind: Kind::Indicator { member, bbox } }
    }

    /// Spatial shift by `fraction` of the ball's half-width along `x_1`.
    pub fn shifted_by_fraction(ball: LBall, fraction: f64) -> Result<Self, PotentialError> {
        let bb = ball.bounding_box();
        let half = 0.5 * (bb.hi[0] - bb.lo[0]);
        let mut h = DVector::zeros(ball.n());
        h[0] = fraction * half;
        Self::perturbed(ball, Perturbation::SpatialShift { h })
    }

    pub fn reference(&self) -> &LBall {
        &self.reference
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        match &self.kind {
            Kind::Perturbed(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_exact_ball(&self) -> bool {
        matches!(self.kind, Kind::Ball)
    }

    pub fn is_indicator(&self) -> bool {
        matches!(self.kind, Kind::Indicator { .. })
    }

    /// Reference depth of the body's pole.
    fn offset(&self) -> f64 {
        self.reference.z0().t - self.body.z0().t
    }

    /// `(s_lo, s_hi)` in reference depth `s = t0 - τ`.
    pub fn depth_range(&self) -> (f64, f64) {
        match &self.kind {
            Kind::Indicator { bbox, .. } => {
                let n = self.reference.n();
                let t0 = self.reference.z0().t;
                (t0 - bbox.hi[n], t0 - bbox.lo[n])
            }
            _ => {
                let o = self.offset();
                (o, o + self.body.s_max())
            }
        }
    }

    /// Section of `D` at reference depth `s`; `None` when empty or when the
    /// domain is only known through an indicator.
    pub fn slice_region(&self, s: f64) -> Option<SliceRegion> {
        let p = match &self.kind {
            Kind::Indicator { .. } => return None,
            Kind::Ball => None,
            Kind::Perturbed(p) => Some(p),
        };
        let sb = s - self.offset();
        let s_max = self.body.s_max();
        let e = self.body.slice(sb).ok()?;
        let region = match p {
            None | Some(Perturbation::RadiusMismatch { .. }) | Some(Perturbation::TimeShift { .. }) => SliceRegion::ellipsoid(e),
            Some(Perturbation::SliceScale { magnitude }) => {
                let f = 1.0 + magnitude * (PI * sb / s_max).sin().powi(4);
                SliceRegion::ellipsoid(e.scaled_level(f * f))
            }
            Some(Perturbation::SpatialShift { h }) => SliceRegion::ellipsoid(e.translated(h)),
            Some(Perturbation::Bite { radius }) => {
                let hole = if sb >= BITE_WINDOW.0 * s_max && sb <= BITE_WINDOW.1 * s_max {
                    let alpha = 0.5 * (1.0 - radius);
                    let offset = e.frame().column(0) * alpha;
                    Some(e.scaled_level(radius * radius).translated(&offset.into_owned()))
                } else {
                    None
                };
                SliceRegion { outer: e, clip: None, hole }
            }
        };
        Some(region)
    }

    /// Depths where the slices change non-smoothly.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Perturbed(Perturbation::Bite { .. }) => {
                let s_max = self.body.s_max();
                vec![self.offset() + BITE_WINDOW.0 * s_max, self.offset() + BITE_WINDOW.1 * s_max]
            }
            _ => Vec::new(),
        }
    }

    pub fn contains(&self, z: &GroupPoint) -> bool {
        match &self.kind {
            Kind::Indicator { member, .. } => member(z),
            _ => {
                let s = self.reference.z0().t - z.t;
                self.slice_region(s).is_some_and(|r| r.contains(z.x.as_slice()))
            }
        }
    }

    /// Axis-aligned box containing `D`.
    pub fn bounding_box(&self) -> BoundingBox {
        if let Kind::Indicator { bbox, .. } = &self.kind {
            return bbox.clone();
        }
        let n = self.reference.n();
        let (s_lo, s_hi) = self.depth_range();
        let mut lo = DVector::from_element(n + 1, f64::INFINITY);
        let mut hi = DVector::from_element(n + 1, f64::NEG_INFINITY);
        const STEPS: usize = 512;
        for k in 1..STEPS {
            let s = s_lo + (s_hi - s_lo) * k as f64 / STEPS as f64;
            let Some(region) = self.slice_region(s) else { continue };
            let e = &region.outer;
            for i in 0..n {
                let w = e.frame().row(i).norm();
                lo[i] = lo[i].min(e.center()[i] - w);
                hi[i] = hi[i].max(e.center()[i] + w);
            }
        }
        for i in 0..n {
            let pad = 0.05 * (hi[i] - lo[i]);
            lo[i] -= pad;
            hi[i] += pad;
        }
        let t0 = self.reference.z0().t;
        lo[n] = t0 - s_hi;
        hi[n] = t0 - s_lo;
        BoundingBox { lo, hi }
    }
}

/// `u` for the mean-value functional.
#[derive(Clone, Copy)]
pub enum MeanValueInput<'a> {
    Polynomial(&'a AnisoPolynomial),
    Callable(&'a (dyn Fn(&GroupPoint) -> f64 + Sync)),
}

/// `r⁻¹ ∫_{Ω_r(z0)} u(ζ) W(z0⁻¹∘ζ) dζ`.
pub fn mean_value(ev: &Arc<GammaEvaluator>, u: MeanValueInput<'_>, z0: &GroupPoint, r: f64, cfg: &QuadratureConfig) -> Result<Estimate, PotentialError> {
    let ball = LBall::new(ev.clone(), z0.clone(), r)?;
    let est = match u {
        MeanValueInput::Polynomial(p) => integrate_over_ball(BallIntegrand::PolynomialTimesW(p), &ball, cfg),
        MeanValueInput::Callable(f) => {
            let spec = ev.spec();
            let inv = spec.inverse(z0);
            let g = move |z: &GroupPoint| f(z) * ev.kernel_w(&spec.compose(&inv, z)).unwrap_or(0.0);
            integrate_over_ball(BallIntegrand::Callable(&g), &ball, cfg)
        }
    };
    Ok(est.scale(1.0 / r))
}

/// Shared data for slice integrals against a domain.
struct SliceContext<'a> {
    domain: &'a SlicedDomain,
    cfg: &'a QuadratureConfig,
}

impl<'a> SliceContext<'a> {
    fn new(domain: &'a SlicedDomain, cfg: &'a QuadratureConfig) -> Self {
        Self { domain, cfg }
    }

    fn ev(&self) -> &GammaEvaluator {
        self.domain.reference.evaluator()
    }

    /// `∫_{D_s} Γ(ζ, z) W(z0⁻¹∘ζ) dx` at reference depth `s`.
    fn gamma_w_slice(&self, s: f64, z: &GroupPoint) -> (f64, f64) {
        let reference = &self.domain.reference;
        let ev = self.ev();
        let tau = reference.z0().t - s;
        let delta = tau - z.t;
        if !(delta > 0.0) || s == 0.0 {
            return (0.0, 0.0);
        }
        let Some(region) = self.domain.slice_region(s) else { return (0.0, 0.0) };
        let Some(frame) = ev.frame(delta) else { return (0.0, 0.0) };
        let mean = ev.model().exp().eval(delta) * &z.x;
        let Ok(k) = ev.kernel_form(-s) else { return (0.0, 0.0) };
        let w_center = reference.slice_center(s);
        let g = GaussQuadratic { mean: &mean, chol: &frame.chol, k: &k, w_center: &w_center, k0: 0.0 };
        let (v, e) = gauss_quadratic_on_region(&g, &region, self.cfg.slice_rel_tol, 1e-300);
        let c = ev.normalization();
        (c * v, c * e)
    }
}

/// `r⁻¹ ∫_D Γ(ζ, z) W(z0⁻¹∘ζ) dζ`.
pub fn gamma_potential(domain: &SlicedDomain, z: &GroupPoint, cfg: &QuadratureConfig) -> Estimate {
    let r = domain.reference.r();
    if domain.is_indicator() {
        return indicator_gamma_w(domain, z, cfg).scale(1.0 / r);
    }
    let ctx = SliceContext::new(domain, cfg);
    let (s_lo, s_hi) = domain.depth_range();
    // Γ(ζ, z) vanishes once τ ≤ t_z
    let cut = domain.reference.z0().t - z.t;
    if cut <= s_lo {
        return Estimate::exact(0.0);
    }
    let mut span = TimeSpan { lo: s_lo, hi: s_hi, pole_at_lo: true, sqrt_at_hi: true, breakpoints: domain.breakpoints() };
    if cut < s_hi {
        span.hi = cut;
        span.sqrt_at_hi = false;
    }
    if s_lo < 0.0 && span.hi > 0.0 {
        span.breakpoints.push(0.0);
    }
    cfg.integrator().integrate(|s| ctx.gamma_w_slice(s, z), &span).scale(1.0 / r)
}

fn indicator_gamma_w(domain: &SlicedDomain, z: &GroupPoint, cfg: &QuadratureConfig) -> Estimate {
    let Kind::Indicator { member, bbox } = &domain.kind else { unreachable!() };
    let ev = domain.reference.evaluator();
    let spec = ev.spec();
    let inv = spec.inverse(domain.reference.z0());
    let f = |zeta: &GroupPoint| {
        if !member(zeta) {
            return 0.0;
        }
        let w = ev.kernel_w(&spec.compose(&inv, zeta)).unwrap_or(0.0);
        ev.gamma(zeta, z) * w
    };
    mc_box(bbox, &f, cfg.mc_samples, cfg.seed)
}

/// Plain Monte Carlo over a box, chunked like the ball sampler.
pub fn mc_box(bbox: &BoundingBox, f: &(dyn Fn(&GroupPoint) -> f64 + Sync), count: usize, seed: u64) -> Estimate {
    let n = bbox.lo.len() - 1;
    let chunks = count.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = chunk_rng(seed, k as u64);
            let m = CHUNK.min(count - k * CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..m {
                let x = DVector::from_fn(n, |i, _| bbox.lo[i] + (bbox.hi[i] - bbox.lo[i]) * rng.random::<f64>());
                let t = bbox.lo[n] + (bbox.hi[n] - bbox.lo[n]) * rng.random::<f64>();
                let v = f(&GroupPoint::new(x, t));
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = count as f64;
    let mean = s1 / nf;
    let var = (s2 / nf - mean * mean).max(0.0);
    let vol = bbox.volume();
    Estimate { value: vol * mean, error: vol * (var / nf).sqrt(), converged: true, evaluations: count }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualEntry {
    pub index: usize,
    pub x: Vec<f64>,
    pub t: f64,
    /// `∫_D Γ(ζ, z) W(z0⁻¹∘ζ) dζ`.
    pub lhs: f64,
    /// `r Γ(z0, z)`.
    pub rhs: f64,
    pub abs_residual: f64,
    /// `|lhs - rhs| / rhs`, or the absolute residual when `rhs ≤ 1e-12`.
    pub rel_residual: f64,
    pub lhs_error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpReport {
    pub p: f64,
    /// `‖(1_D − 1_Ω) W‖_p`.
    pub value: f64,
    /// `∫ |1_D − 1_Ω| W^p`.
    pub integral: f64,
    pub error: f64,
    /// The integral converged to a finite value.
    pub finite: bool,
    /// `p > Q/2`.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RigidityReport {
    pub points: Vec<ResidualEntry>,
    pub sup_abs_residual: f64,
    pub sup_rel_residual: f64,
    pub all_converged: bool,
    pub lp: Option<LpReport>,
}

const RHS_FLOOR: f64 = 1e-12;

/// Both sides of `∫_D Γ(ζ, z) W dζ = r Γ(z0, z)` at exterior points.
pub fn potential_identity_residual(domain: &SlicedDomain, points: &[GroupPoint], cfg: &QuadratureConfig) -> Result<RigidityReport, PotentialError> {
    if let Some(i) = points.iter().position(|z| domain.contains(z)) {
        return Err(PotentialError::TestPointInsideDomain(i));
    }
    let reference = &domain.reference;
    let r = reference.r();
    let ev = reference.evaluator();
    let entries: Vec<ResidualEntry> = points
        .par_iter()
        .enumerate()
        .map(|(index, z)| {
            let lhs = gamma_potential(domain, z, cfg).scale(r);
            let rhs = r * ev.gamma(reference.z0(), z);
            let abs_residual = (lhs.value - rhs).abs();
            let rel_residual = if rhs > RHS_FLOOR { abs_residual / rhs } else { abs_residual };
            ResidualEntry {
                index,
                x: z.x.iter().copied().collect(),
                t: z.t,
                lhs: lhs.value,
                rhs,
                abs_residual,
                rel_residual,
                lhs_error: lhs.error,
                converged: lhs.converged,
            }
        })
        .collect();
    let sup_abs_residual = entries.iter().map(|e| e.abs_residual).fold(0.0, f64::max);
    let sup_rel_residual = entries.iter().map(|e| e.rel_residual).fold(0.0, f64::max);
    let all_converged = entries.iter().all(|e| e.converged);
    Ok(RigidityReport { points: entries, sup_abs_residual, sup_rel_residual, all_converged, lp: None })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginEntry {
    pub index: usize,
    pub x: Vec<f64>,
    pub t: f64,
    /// `Γ(z0, z)`.
    pub gamma: f64,
    /// `Γ_μ(z)`.
    pub potential: f64,
    /// `Γ(z0, z) - Γ_μ(z)`.
    pub margin: f64,
    pub error: f64,
}

/// `Γ(z0, z) - Γ_μ(z)` for points strictly inside `Ω_r(z0)`.
pub fn interior_inequality_margin(ball: &LBall, points: &[GroupPoint], cfg: &QuadratureConfig) -> Result<Vec<MarginEntry>, PotentialError> {
    let ev = ball.evaluator();
    for (i, z) in points.iter().enumerate() {
        if ball.r() * ev.gamma(ball.z0(), z) - 1.0 <= 1e-6 {
            return Err(PotentialError::PointNotInterior(i));
        }
    }
    let domain = SlicedDomain::exact(ball.clone());
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(index, z)| {
            let pot = gamma_potential(&domain, z, cfg);
            let gamma = ev.gamma(ball.z0(), z);
            MarginEntry {
                index,
                x: z.x.iter().copied().collect(),
                t: z.t,
                gamma,
                potential: pot.value,
                margin: gamma - pot.value,
                error: pot.error,
            }
        })
        .collect())
}

/// Seeded interior points at depths `[0.2, 0.8] s_max`, within half the
/// slice in its unit-ball frame.
pub fn interior_points(ball: &LBall, count: usize, seed: u64) -> Vec<GroupPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s = ball.s_max() * (0.2 + 0.6 * rng.random::<f64>());
            let e = ball.slice(s).expect("depth inside the ball");
            let u = unit_ball_point(&mut rng, ball.n()) * 0.5;
            GroupPoint::new(e.center() + e.frame() * u, ball.z0().t - s)
        })
        .collect()
}

/// `(∫ |1_D − 1_Ω| W(z0⁻¹∘ζ)^p dζ)^{1/p}` over Lebesgue measure on `R^{n+1}`.
pub fn lp_condition_norm(domain: &SlicedDomain, p: f64, cfg: &QuadratureConfig) -> LpReport {
    let reference = &domain.reference;
    let q = reference.evaluator().spec().homogeneous_dimension() as f64;
    let certified = p > q / 2.0;
    if domain.is_exact_ball() {
        return LpReport { p, value: 0.0, integral: 0.0, error: 0.0, finite: true, certified };
    }
    if domain.is_indicator() {
        let est = lp_indicator(domain, p, cfg);
        return LpReport { p, value: est.value.max(0.0).powf(1.0 / p), integral: est.value, error: est.error, finite: est.value.is_finite(), certified };
    }
    let ctx = LpSlices::new(domain, p, cfg);
    let (d_lo, d_hi) = domain.depth_range();
    let lo = d_lo.min(0.0);
    let hi = d_hi.max(reference.s_max());
    let mut bps = domain.breakpoints();
    bps.extend([d_lo, d_hi, 0.0, reference.s_max()]);
    let span = TimeSpan { lo, hi, pole_at_lo: true, sqrt_at_hi: true, breakpoints: bps };
    let est = cfg.integrator().integrate(|s| ctx.slice(s), &span);
    let finite = est.converged && est.value.is_finite();
    LpReport { p, value: est.value.max(0.0).powf(1.0 / p), integral: est.value, error: est.error, finite, certified }
}

fn lp_indicator(domain: &SlicedDomain, p: f64, cfg: &QuadratureConfig) -> Estimate {
    let Kind::Indicator { member, bbox } = &domain.kind else { unreachable!() };
    let reference = &domain.reference;
    let ev = reference.evaluator();
    let spec = ev.spec();
    let inv = spec.inverse(reference.z0());
    let bb = bbox.union(&reference.bounding_box());
    let f = |z: &GroupPoint| {
        if member(z) == reference.contains(z) {
            return 0.0;
        }
        ev.kernel_w(&spec.compose(&inv, z)).unwrap_or(0.0).powf(p)
    };
    mc_box(&bb, &f, cfg.mc_samples, cfg.seed)
}

struct LpSlices<'a> {
    domain: &'a SlicedDomain,
    p: f64,
    rules: AngularRules,
    moments: MonomialMoments,
    cfg: &'a QuadratureConfig,
}

impl<'a> LpSlices<'a> {
    fn new(domain: &'a SlicedDomain, p: f64, cfg: &'a QuadratureConfig) -> Self {
        Self { domain, p, rules: AngularRules::new(domain.reference.n()), moments: MonomialMoments::new(), cfg }
    }

    fn integer_power(&self) -> Option<u32> {
        let k = self.p.round();
        (k >= 1.0 && (self.p - k).abs() < 1e-12 && k <= 8.0).then_some(k as u32)
    }

    /// `∫_E W^p` over an ellipsoid.
    fn on_ellipsoid(&self, e: &Ellipsoid, k: &DMatrix<f64>, c: &DVector<f64>) -> (f64, f64) {
        if let Some(m) = self.integer_power() {
            let w = SpatialPolynomial::quadratic_form(k, c);
            let mut pw = w.clone();
            for _ in 1..m {
                pw = pw.mul(&w);
            }
            (ellipsoid_polynomial_integral(&pw, e, &self.moments), 0.0)
        } else {
            let region = SliceRegion::ellipsoid(e.clone());
            self.polar(&region, e.center(), e.frame(), k, c)
        }
    }

    fn polar(&self, region: &SliceRegion, anchor: &DVector<f64>, frame: &DMatrix<f64>, k: &DMatrix<f64>, c: &DVector<f64>) -> (f64, f64) {
        let n = c.len();
        let p = self.p;
        polar_on_region(region, anchor, frame, &self.rules, self.cfg.slice_rel_tol, 1e-300, |x| {
            let mut w = 0.0;
            for i in 0..n {
                for j in 0..n {
                    w += (x[i] - c[i]) * k[(i, j)] * (x[j] - c[j]);
                }
            }
            w.max(0.0).powf(p)
        })
    }

    /// `∫_{D_s Δ Ω_s} W^p dx`.
    fn slice(&self, s: f64) -> (f64, f64) {
        if s == 0.0 {
            return (0.0, 0.0);
        }
        let reference = &self.domain.reference;
        let ev = reference.evaluator();
        let Ok(k) = ev.kernel_form(-s) else { return (0.0, 0.0) };
        let c = reference.slice_center(s);
        let d = self.domain.slice_region(s);
        let o = reference.slice(s).ok();
        let pert = self.domain.perturbation();
        match (d, o) {
            (None, None) => (0.0, 0.0),
            (Some(d), None) => self.region_integral(&d, &k, &c),
            (None, Some(o)) => self.on_ellipsoid(&o, &k, &c),
            (Some(d), Some(o)) => match pert {
                Some(Perturbation::SliceScale { magnitude }) => {
                    let f = magnitude * (PI * s / reference.s_max()).sin().powi(4);
                    self.annulus(&o, 2.0 * f.ln_1p(), &k, &c)
                }
                Some(Perturbation::RadiusMismatch { r_prime }) => {
                    let dl = 4.0 * (r_prime / reference.r()).ln();
                    self.annulus(&o, (dl / o.level()).ln_1p(), &k, &c)
                }
                Some(Perturbation::Bite { .. }) => match &d.hole {
                    Some(h) => self.on_ellipsoid(h, &k, &c),
                    None => (0.0, 0.0),
                },
                _ => {
                    let (a, ea) = self.region_integral(&d, &k, &c);
                    let (b, eb) = self.on_ellipsoid(&o, &k, &c);
                    let (i, ei) = self.intersection(&d.outer, &o, &k, &c);
                    (a + b - 2.0 * i, ea + eb + 2.0 * ei)
                }
            },
        }
    }

    /// `∫ W^p` between `o` and the concentric copy with level `o.level()·e^{ln_ratio}`.
    /// `W^p` is homogeneous of degree `2p` about the common centre, so the
    /// difference is a multiple of `∫_o W^p`; `expm1` keeps thin shells exact.
    fn annulus(&self, o: &Ellipsoid, ln_ratio: f64, k: &DMatrix<f64>, c: &DVector<f64>) -> (f64, f64) {
        let (b, eb) = self.on_ellipsoid(o, k, c);
        let deg = 0.5 * (o.dim() as f64 + 2.0 * self.p);
        let factor = (deg * ln_ratio).exp_m1().abs();
        (b * factor, eb * factor)
    }

    fn region_integral(&self, d: &SliceRegion, k: &DMatrix<f64>, c: &DVector<f64>) -> (f64, f64) {
        let (a, ea) = self.on_ellipsoid(&d.outer, k, c);
        match &d.hole {
            Some(h) => {
                let (b, eb) = self.on_ellipsoid(h, k, c);
                (a - b, ea + eb)
            }
            None => (a, ea),
        }
    }

    fn intersection(&self, a: &Ellipsoid, b: &Ellipsoid, k: &DMatrix<f64>, c: &DVector<f64>) -> (f64, f64) {
        // a point of a ∩ b on the segment between the centres
        let anchor = (0..=64).find_map(|i| {
            let w = i as f64 / 64.0;
            let x = a.center() * (1.0 - w) + b.center() * w;
            (a.contains(x.as_slice()) && b.contains(x.as_slice())).then_some(x)
        });
        let Some(anchor) = anchor else { return (0.0, 0.0) };
        let region = SliceRegion { outer: a.clone(), clip: Some(b.clone()), hole: None };
        self.polar(&region, &anchor, a.frame(), k, c)
    }
}

/// Category of an exterior test point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointCategory {
    /// Below the domain, where `Γ(z0, z) > 0`.
    Below,
    /// At a depth of the domain, outside its section.
    Beside,
    /// At or above the top of the domain; both sides vanish.
    Above,
}

/// Seeded exterior points: half below, a quarter beside, the rest above.
/// Every point lies outside both the domain and the reference ball.
pub fn exterior_test_points(domain: &SlicedDomain, count: usize, seed: u64) -> Vec<(GroupPoint, PointCategory)> {
    let reference = &domain.reference;
    let ev = reference.evaluator();
    let z0 = reference.z0();
    let n = reference.n();
    let bb = domain.bounding_box().union(&reference.bounding_box());
    let (t_bottom, t_top) = (bb.lo[n], bb.hi[n]);
    let depth = t_top - t_bottom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_below = count / 2;
    let n_beside = count / 4;
    let mut out = Vec::with_capacity(count);
    let outside = |z: &GroupPoint| !domain.contains(z) && !reference.contains(z);
    while out.len() < count {
        let k = out.len();
        let (z, cat) = if k < n_below {
            // a typical point of Γ(z0, ·) at a time below the domain
            let t = t_bottom - depth * (0.1 + 0.9 * rng.random::<f64>());
            let d = z0.t - t;
            let l = ev.frame(d).expect("positive time").chol;
            let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &z0.x - l * g * (2f64.sqrt() * 0.7);
            let x = ev.model().exp().eval(-d) * y;
            (GroupPoint::new(x, t), PointCategory::Below)
        } else if k < n_below + n_beside {
            let (s_lo, s_hi) = domain.depth_range();
            let s = s_lo + (s_hi - s_lo) * (0.1 + 0.8 * rng.random::<f64>());
            let Some(region) = domain.slice_region(s).or_else(|| reference.slice(s).ok().map(SliceRegion::ellipsoid)) else {
                continue;
            };
            let u = unit_ball_point(&mut rng, n);
            let norm = u.norm();
            if norm == 0.0 {
                continue;
            }
            let u = u * ((1.3 + 0.7 * rng.random::<f64>()) / norm);
            let e = &region.outer;
            (GroupPoint::new(e.center() + e.frame() * u, z0.t - s), PointCategory::Beside)
        } else {
            let t = t_top.max(z0.t) + depth * 0.5 * rng.random::<f64>();
            let x = DVector::from_fn(n, |i, _| bb.lo[i] + (bb.hi[i] - bb.lo[i]) * rng.random::<f64>());
            (GroupPoint::new(x, t), PointCategory::Above)
        };
        if outside(&z) {
            out.push((z, cat));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FutureMassReport {
    pub x_star: Vec<f64>,
    pub t_star: f64,
    /// `Γ(z0, z*)`, zero because `t* > t0`.
    pub u_star_at_z0: f64,
    /// `r⁻¹ ∫_D Γ(ζ, z*) W(z0⁻¹∘ζ) dζ`.
    pub mean_value: f64,
    pub error: f64,
    pub converged: bool,
    /// Mean value exceeds five error estimates.
    pub violation: bool,
}

/// The mean-value functional of `u* = Γ(·, z*)` for a point `z*` above
/// `t0` but below the top of `D`, outside `D`. A strictly positive value
/// against `u*(z0) = 0` shows `D` cannot satisfy the mean-value formula.
pub fn future_mass_check(domain: &SlicedDomain, cfg: &QuadratureConfig) -> Result<FutureMassReport, PotentialError> {
    let reference = &domain.reference;
    let t0 = reference.z0().t;
    let (s_lo, s_hi) = domain.depth_range();
    if !(s_lo < 0.0) {
        return Err(PotentialError::NoFutureMass);
    }
    let top = t0 - s_lo;
    let t_star = t0 + 0.5 * (top - t0);
    let s_star = t0 - t_star;
    if s_star >= s_hi {
        return Err(PotentialError::NoFutureMass);
    }
    let region = domain.slice_region(s_star).ok_or(PotentialError::NoFutureMass)?;
    let mut u = DVector::zeros(reference.n());
    u[0] = 1.5;
    let x_star = region.outer.center() + region.outer.frame() * u;
    let z_star = GroupPoint::new(x_star, t_star);
    debug_assert!(!domain.contains(&z_star));
    let ctx = SliceContext::new(domain, cfg);
    let span = TimeSpan { lo: s_lo, hi: s_star, pole_at_lo: true, sqrt_at_hi: false, breakpoints: domain.breakpoints() };
    let est = cfg.integrator().integrate(|s| ctx.gamma_w_slice(s, &z_star), &span).scale(1.0 / reference.r());
    let u0 = reference.evaluator().gamma(reference.z0(), &z_star);
    Ok(FutureMassReport {
        x_star: z_star.x.iter().copied().collect(),
        t_star,
        u_star_at_z0: u0,
        mean_value: est.value,
        error: est.error,
        converged: est.converged,
        violation: est.value > u0 + 5.0 * est.error && est.value > 0.0,
    })
}
