//! Cubature on a single time slice.
//!
//! Slices are ellipsoids, possibly clipped by a second ellipsoid and with
//! an ellipsoidal hole; a line meets such a region in at most two
//! intervals. Gaussian-times-quadratic integrands are integrated along
//! lines in closed form through `erf`, everything else in polar
//! coordinates about an interior point.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::gauss::{gauss_legendre, Rule};
use crate::ball::Ellipsoid;

/// At most two parameter intervals along a ray.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Intervals {
    parts: [(f64, f64); 2],
    len: usize,
}

impl Intervals {
    pub fn single(a: f64, b: f64) -> Self {
        let mut out = Self::default();
        if b > a {
            out.parts[0] = (a, b);
            out.len = 1;
        }
        out
    }

    pub fn as_slice(&self) -> &[(f64, f64)] {
        &self.parts[..self.len]
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total_length(&self) -> f64 {
        self.as_slice().iter().map(|(a, b)| b - a).sum()
    }

    /// Removes `(c, d)` from a single interval.
    fn minus(self, hole: Option<(f64, f64)>) -> Self {
        let Some((c, d)) = hole else { return self };
        if self.len == 0 {
            return self;
        }
        let (a, b) = self.parts[0];
        let mut out = Self::default();
        if c > a {
            out.parts[out.len] = (a, c.min(b));
            out.len += 1;
        }
        if d < b {
            out.parts[out.len] = (d.max(a), b);
            out.len += 1;
        }
        out.parts[..out.len].iter().copied().filter(|(x, y)| y > x).fold(Self::default(), |mut acc, p| {
            acc.parts[acc.len] = p;
            acc.len += 1;
            acc
        })
    }
}

/// `(outer ∩ clip) \ hole` on one slice.
#[derive(Debug, Clone)]
pub struct SliceRegion {
    pub outer: Ellipsoid,
    pub clip: Option<Ellipsoid>,
    pub hole: Option<Ellipsoid>,
}

impl SliceRegion {
    pub fn ellipsoid(e: Ellipsoid) -> Self {
        Self { outer: e, clip: None, hole: None }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.outer.contains(x)
            && self.clip.as_ref().is_none_or(|c| c.contains(x))
            && self.hole.as_ref().is_none_or(|h| !h.contains(x))
    }

    /// `{ τ ≥ 0 : p + τ v ∈ region }`.
    pub fn ray(&self, p: &[f64], v: &[f64]) -> Intervals {
        let Some((mut a, mut b)) = self.outer.ray_interval(p, v) else {
            return Intervals::default();
        };
        if let Some(c) = &self.clip {
            let Some((c0, c1)) = c.ray_interval(p, v) else {
                return Intervals::default();
            };
            a = a.max(c0);
            b = b.min(c1);
        }
        let hole = self.hole.as_ref().and_then(|h| h.ray_interval(p, v));
        Intervals::single(a, b).minus(hole)
    }

    /// `{ τ ∈ ℝ : p + τ v ∈ region }`.
    pub fn line(&self, p: &[f64], v: &[f64]) -> Intervals {
        let Some((mut a, mut b)) = self.outer.line_interval(p, v) else {
            return Intervals::default();
        };
        if let Some(c) = &self.clip {
            let Some((c0, c1)) = c.line_interval(p, v) else {
                return Intervals::default();
            };
            a = a.max(c0);
            b = b.min(c1);
        }
        let hole = self.hole.as_ref().and_then(|h| h.line_interval(p, v));
        Intervals::single(a, b).minus(hole)
    }

    /// A point inside the region to expand about, if the centre of the
    /// outer ellipsoid qualifies.
    pub fn anchor(&self) -> Option<DVector<f64>> {
        let c = self.outer.center().clone();
        self.contains(c.as_slice()).then_some(c)
    }
}

/// Quadrature on `S^{n-1}` with directions stored row by row.
#[derive(Debug, Clone)]
pub struct SphereRule {
    n: usize,
    dirs: Vec<f64>,
    weights: Vec<f64>,
}

impl SphereRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn direction(&self, k: usize) -> &[f64] {
        &self.dirs[k * self.n..(k + 1) * self.n]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    /// Refinement `level` of the product rule for `S^{n-1}`.
    pub fn new(n: usize, level: u32) -> Self {
        match n {
            1 => Self { n, dirs: vec![1.0, -1.0], weights: vec![1.0, 1.0] },
            2 => {
                let m = 8usize << level;
                let mut dirs = Vec::with_capacity(2 * m);
                for k in 0..m {
                    let a = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                    dirs.push(a.cos());
                    dirs.push(a.sin());
                }
                Self { n, dirs, weights: vec![2.0 * PI / m as f64; m] }
            }
            3 => {
                let nz = 4usize << level;
                let np = 2 * nz;
                let gl = gauss_legendre(nz);
                let mut dirs = Vec::with_capacity(3 * nz * np);
                let mut weights = Vec::with_capacity(nz * np);
                for (z, wz) in gl.nodes.iter().zip(&gl.weights) {
                    let rho = (1.0 - z * z).max(0.0).sqrt();
                    for k in 0..np {
                        let a = 2.0 * PI * (k as f64 + 0.5) / np as f64;
                        dirs.extend_from_slice(&[rho * a.cos(), rho * a.sin(), *z]);
                        weights.push(wz * 2.0 * PI / np as f64);
                    }
                }
                Self { n, dirs, weights }
            }
            _ => {
                let inner = Self::new(n - 1, level);
                let gl = gauss_legendre(4usize << level);
                let mut dirs = Vec::new();
                let mut weights = Vec::new();
                for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                    let phi = 0.5 * PI * x;
                    let (c, s) = (phi.cos(), phi.sin());
                    let wphi = 0.5 * PI * w * c.powi(n as i32 - 2);
                    for k in 0..inner.len() {
                        dirs.extend(inner.direction(k).iter().map(|d| c * d));
                        dirs.push(s);
                        weights.push(wphi * inner.weight(k));
                    }
                }
                Self { n, dirs, weights }
            }
        }
    }
}

/// Sphere rules for every refinement level, plus a radial rule.
#[derive(Debug, Clone)]
pub struct AngularRules {
    n: usize,
    levels: Vec<SphereRule>,
    radial: Rule,
}

impl AngularRules {
    pub fn new(n: usize) -> Self {
        let max_level = match n {
            1 => 0,
            2 => 8,
            3 => 4,
            _ => 2,
        };
        Self {
            n,
            levels: (0..=max_level).map(|l| SphereRule::new(n, l)).collect(),
            radial: gauss_legendre(16),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// `Σ_θ w_θ g(θ)` at increasing levels until two successive values
    /// agree to `rel_tol` (or `abs_tol`). Returns value and the last
    /// difference as error.
    pub fn adaptive(&self, rel_tol: f64, abs_tol: f64, mut g: impl FnMut(&[f64]) -> f64) -> (f64, f64) {
        let sum = |rule: &SphereRule, g: &mut dyn FnMut(&[f64]) -> f64| -> f64 {
            (0..rule.len()).map(|k| rule.weight(k) * g(rule.direction(k))).sum()
        };
        if self.levels.len() == 1 {
            return (sum(&self.levels[0], &mut g), 0.0);
        }
        // never trust agreement between the two coarsest levels
        let first = 1.min(self.levels.len() - 2);
        let mut prev = sum(&self.levels[first], &mut g);
        let mut err = f64::INFINITY;
        let mut cur = prev;
        for rule in &self.levels[first + 1..] {
            cur = sum(rule, &mut g);
            err = (cur - prev).abs();
            if err <= rel_tol * cur.abs() || err <= abs_tol {
                break;
            }
            prev = cur;
        }
        (cur, err)
    }
}

/// `∫_lo^hi P(τ) e^{-(τ+b)²/4} dτ` with `P` given by ascending coefficients,
/// dropping `|τ + b| > reach`.
pub fn gauss_poly_radial(p: &[f64], b: f64, lo: f64, hi: f64, reach: f64, short: &Rule) -> f64 {
    let lo = lo.max(-b - reach);
    let hi = hi.min(-b + reach);
    if !(hi > lo) {
        return 0.0;
    }
    if hi - lo < 1.0 {
        return short.integrate(lo, hi, |t| {
            let v = t + b;
            horner(p, t) * (-0.25 * v * v).exp()
        });
    }
    // P(v - b) in powers of v
    let q = taylor_shift(p, -b);
    let (a, c) = (lo + b, hi + b);
    let ea = (-0.25 * a * a).exp();
    let ec = (-0.25 * c * c).exp();
    let mut j = [0.0_f64; 12];
    j[0] = PI.sqrt() * erf_diff(a * 0.5, c * 0.5);
    if q.len() > 1 {
        j[1] = 2.0 * (ea - ec);
    }
    let (mut apow, mut cpow) = (1.0, 1.0);
    for k in 2..q.len() {
        apow *= a;
        cpow *= c;
        j[k] = 2.0 * (apow * ea - cpow * ec) + 2.0 * (k - 1) as f64 * j[k - 2];
    }
    q.iter().zip(&j).map(|(x, y)| x * y).sum()
}

/// `erf(c) - erf(a)` for `a ≤ c`, avoiding cancellation in the tails.
fn erf_diff(a: f64, c: f64) -> f64 {
    if a >= 0.0 {
        libm::erfc(a) - libm::erfc(c)
    } else if c <= 0.0 {
        libm::erfc(-c) - libm::erfc(-a)
    } else {
        libm::erf(c) - libm::erf(a)
    }
}

#[inline]
fn horner(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Coefficients of `v ↦ P(v + h)`.
fn taylor_shift(p: &[f64], h: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    let d = q.len();
    for i in 0..d {
        for k in (i..d - 1).rev() {
            q[k] += h * q[k + 1];
        }
    }
    q
}

/// Gaussian `x ↦ exp(-¼ |L^{-1}(x - m)|²)` times the quadratic
/// `<K (x - w), x - w> + k0`, with `L` lower triangular.
#[derive(Debug, Clone)]
pub struct GaussQuadratic<'a> {
    pub mean: &'a DVector<f64>,
    pub chol: &'a DMatrix<f64>,
    pub k: &'a DMatrix<f64>,
    pub w_center: &'a DVector<f64>,
    pub k0: f64,
}

/// `∫_region exp(-¼|L^{-1}(x-m)|²) (<K(x-w),x-w> + k0) dx / det L`,
/// i.e. the integral in whitened coordinates. Multiply by `(4π)^{-n/2}`
/// to integrate the normalised density.
///
/// Iterated integration in whitened coordinates `w` rotated onto the
/// principal axes of the outer ellipsoid, where the Gaussian is isotropic
/// and the ellipsoid axis-aligned. The longest axis is innermost and done
/// in closed form over the exact chord; the others use Gauss–Legendre in
/// `φ` with `w_k = c_k + h_k sin φ`, which absorbs the square-root ends of
/// each chord. The order doubles until two successive rules agree, and the
/// interval is halved if the highest order still disagrees.
pub fn gauss_quadratic_on_region(g: &GaussQuadratic<'_>, region: &SliceRegion, rel_tol: f64, abs_tol: f64) -> (f64, f64) {
    // outer minus (hole ∩ outer): both pieces are smooth when the hole sits
    // inside, whereas rays grazing the hole would kink the angular integrand
    if let (Some(hole), None) = (&region.hole, &region.clip) {
        let whole = SliceRegion::ellipsoid(region.outer.clone());
        let cut = SliceRegion { outer: hole.clone(), clip: Some(region.outer.clone()), hole: None };
        let (a, ea) = gauss_quadratic_on_region(g, &whole, rel_tol, abs_tol);
        let (b, eb) = gauss_quadratic_on_region(g, &cut, rel_tol, abs_tol);
        return (a - b, ea + eb);
    }
    let Some(setup) = IteratedGauss::new(g, region) else {
        return (0.0, 0.0);
    };
    let mut w = [0.0; MAX_DIM];
    // a coarse pass sets the absolute scale for the inner levels
    let (rough, _) = setup.level(0, 1.0, 0.0, &mut w, f64::INFINITY, 0.0);
    let abs_tol = abs_tol.max(0.1 * rel_tol * rough.abs());
    setup.level(0, 1.0, 0.0, &mut w, rel_tol, abs_tol)
}

/// Beyond this whitened distance the Gaussian is below `1e-300`.
const GAUSS_REACH: f64 = 52.0;
/// `4 ln(1e24)`: the window keeps `|w|² ≤ d² + WINDOW`, with `d` the
/// distance from the Gaussian centre to the ellipsoid.
const WINDOW: f64 = 221.0;
const MAX_DIM: usize = 16;
const MAX_SPLITS: u32 = 8;

fn doubling_rules() -> &'static [Rule] {
    static RULES: OnceLock<Vec<Rule>> = OnceLock::new();
    RULES.get_or_init(|| [6, 12, 24, 48].into_iter().map(gauss_legendre).collect())
}

fn short_rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(10))
}

/// Euclidean distance from the origin to `{ Σ ((w_i - c_i) / h_i)² ≤ 1 }`.
fn distance_to_ellipsoid(c: &[f64], h: &[f64]) -> f64 {
    let g = |lambda: f64| -> f64 { c.iter().zip(h).map(|(&ci, &hi)| (ci * hi / (hi * hi + lambda)).powi(2)).sum() };
    if c.iter().zip(h).map(|(&ci, &hi)| if hi > 0.0 { (ci / hi).powi(2) } else if ci != 0.0 { f64::INFINITY } else { 0.0 }).sum::<f64>() <= 1.0 {
        return 0.0;
    }
    // nearest point w_i = λ c_i / (h_i² + λ) with Σ c_i² h_i² / (h_i² + λ)² = 1
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(hi) > 1.0 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = hi;
    c.iter().zip(h).map(|(&ci, &hi)| (lambda * ci / (hi * hi + lambda)).powi(2)).sum::<f64>().sqrt()
}

/// Gauss–Legendre with doubling order on `[a, b]`, halving the interval
/// when the top order has not settled.
fn doubling(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64, abs_tol: f64, splits: u32) -> (f64, f64) {
    let rules = doubling_rules();
    let mut prev = rules[0].integrate(a, b, &mut *f);
    let mut diff = f64::INFINITY;
    for rule in &rules[1..] {
        let cur = rule.integrate(a, b, &mut *f);
        diff = (cur - prev).abs();
        prev = cur;
        if diff <= abs_tol.max(rel_tol * cur.abs()) {
            return (cur, diff);
        }
    }
    if splits == 0 || !rel_tol.is_finite() {
        return (prev, diff);
    }
    let m = 0.5 * (a + b);
    let l = doubling(f, a, m, rel_tol, 0.5 * abs_tol, splits - 1);
    let r = doubling(f, m, b, rel_tol, 0.5 * abs_tol, splits - 1);
    (l.0 + r.0, l.1 + r.1)
}

struct IteratedGauss<'a> {
    n: usize,
    g: &'a GaussQuadratic<'a>,
    region: &'a SliceRegion,
    /// `x = m + lr w`.
    lr: DMatrix<f64>,
    /// Outer centre minus the quadratic's centre, in `x`.
    offset: [f64; MAX_DIM],
    /// Ellipsoid centre and semi-axes in `w`.
    cw: DVector<f64>,
    half: DVector<f64>,
    /// Squared radius of the window in `w`.
    window: f64,
    /// Innermost direction `lr e_{n-1}`, `K v` and `<K v, v>`.
    v: [f64; MAX_DIM],
    kv: [f64; MAX_DIM],
    vkv: f64,
}

impl<'a> IteratedGauss<'a> {
    fn new(g: &'a GaussQuadratic<'a>, region: &'a SliceRegion) -> Option<Self> {
        let n = g.mean.len();
        assert!(n <= MAX_DIM, "dimension {n} exceeds {MAX_DIM}");
        let l = g.chol;
        let y_frame = l.solve_lower_triangular(region.outer.frame())?;
        let cy = l.solve_lower_triangular(&(region.outer.center() - g.mean))?;
        let eig = (&y_frame * y_frame.transpose()).symmetric_eigen();
        // ascending semi-axes so the longest is innermost
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let r = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        let half = DVector::from_fn(n, |j, _| eig.eigenvalues[order[j]].max(0.0).sqrt());
        let cw = r.transpose() * cy;
        if cw.norm() - half.max() > GAUSS_REACH {
            return None;
        }
        let lr = l * r;
        let mut v = [0.0; MAX_DIM];
        let mut kv = [0.0; MAX_DIM];
        for i in 0..n {
            v[i] = lr[(i, n - 1)];
        }
        let mut vkv = 0.0;
        for i in 0..n {
            kv[i] = (0..n).map(|j| g.k[(i, j)] * v[j]).sum();
            vkv += kv[i] * v[i];
        }
        let mut offset = [0.0; MAX_DIM];
        for i in 0..n {
            offset[i] = region.outer.center()[i] - g.w_center[i];
        }
        let d = distance_to_ellipsoid(cw.as_slice(), half.as_slice());
        Some(Self { n, g, region, lr, offset, cw, half, window: d * d + WINDOW, v, kv, vkv })
    }

    /// Integral over `w_k, …, w_{n-1}` given `w_0 … w_{k-1}`, held in `w` as
    /// offsets from the ellipsoid centre; `rem` is what is
    /// left of the unit level after the fixed coordinates, `gauss` the
    /// exponent `-¼ Σ_{i<k} w_i²` so far. An infinite `rel_tol` asks for a
    /// single low-order rule.
    fn level(&self, k: usize, rem: f64, gauss: f64, w: &mut [f64; MAX_DIM], rel_tol: f64, abs_tol: f64) -> (f64, f64) {
        if k == self.n - 1 {
            return (self.line(w, gauss), 0.0);
        }
        let h = self.half[k] * rem.max(0.0).sqrt();
        let c = self.cw[k];
        if !(h > 0.0) {
            return (0.0, 0.0);
        }
        // gauss = -¼ Σ_{i<k} w_i²
        let reach = (self.window + 4.0 * gauss).max(0.0).sqrt();
        let lo = (c - h).max(-reach);
        let hi = (c + h).min(reach);
        if !(hi > lo) {
            return (0.0, 0.0);
        }
        let phi_lo = ((lo - c) / h).clamp(-1.0, 1.0).asin();
        let phi_hi = ((hi - c) / h).clamp(-1.0, 1.0).asin();
        // the outer integrand is at most h times the inner value over a range of at most π
        let inner_abs = abs_tol / (PI * h);
        let mut local = *w;
        let mut f = |phi: f64| {
            let (sn, cs) = phi.sin_cos();
            let wk = c + h * sn;
            local[k] = h * sn;
            let next_rem = rem * cs * cs;
            let (v, _) = self.level(k + 1, next_rem, gauss - 0.25 * wk * wk, &mut local, rel_tol, inner_abs);
            h * cs * v
        };
        if !rel_tol.is_finite() {
            return (doubling_rules()[1].integrate(phi_lo, phi_hi, &mut f), f64::INFINITY);
        }
        doubling(&mut f, phi_lo, phi_hi, rel_tol, abs_tol, MAX_SPLITS)
    }

    /// Closed-form integral along the innermost axis.
    fn line(&self, w: &mut [f64; MAX_DIM], gauss: f64) -> f64 {
        if gauss < -700.0 {
            return 0.0;
        }
        let n = self.n;
        w[n - 1] = 0.0;
        // everything relative to the ellipsoid centre, so that tiny slices
        // far from the Gaussian keep their digits
        let mut p = [0.0; MAX_DIM];
        let mut d = [0.0; MAX_DIM];
        let centre = self.region.outer.center();
        for i in 0..n {
            let step: f64 = (0..n - 1).map(|j| self.lr[(i, j)] * w[j]).sum();
            p[i] = centre[i] + step;
            d[i] = self.offset[i] + step;
        }
        let reach = (self.window + 4.0 * gauss).max(0.0).sqrt();
        let chord = self.region.line(&p[..n], &self.v[..n]);
        let (mut alpha, mut beta) = (self.g.k0, 0.0);
        for i in 0..n {
            let kd: f64 = (0..n).map(|j| self.g.k[(i, j)] * d[j]).sum();
            alpha += d[i] * kd;
            beta += self.kv[i] * d[i];
        }
        let poly = [alpha, 2.0 * beta, self.vkv];
        let mut acc = 0.0;
        for &(a, b) in chord.as_slice() {
            acc += gauss_poly_radial(&poly, self.cw[n - 1], a, b, reach, short_rule());
        }
        acc * gauss.exp()
    }
}

/// `∫_region f(x) dx` by polar expansion about `p` in the frame `T`
/// (`x = p + T τθ`), with Gauss–Legendre on each radial interval.
pub fn polar_on_region(
    region: &SliceRegion,
    p: &DVector<f64>,
    t: &DMatrix<f64>,
    rules: &AngularRules,
    rel_tol: f64,
    abs_tol: f64,
    f: impl Fn(&[f64]) -> f64,
) -> (f64, f64) {
    let n = rules.n();
    let jac = t.determinant().abs();
    let mut x = vec![0.0; n];
    let (val, err) = rules.adaptive(rel_tol, abs_tol, |theta| {
        let th = DVector::from_column_slice(theta);
        let v = t * th;
        let ints = region.ray(p.as_slice(), v.as_slice());
        let mut acc = 0.0;
        for &(a, b) in ints.as_slice() {
            acc += rules.radial.integrate(a, b, |tau| {
                for i in 0..n {
                    x[i] = p[i] + tau * v[i];
                }
                tau.powi(n as i32 - 1) * f(&x)
            });
        }
        acc
    });
    (val * jac, err * jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(cx: f64, r: f64) -> Ellipsoid {
        Ellipsoid::new(DVector::from_column_slice(&[cx, 0.0]), DMatrix::identity(2, 2), r * r).unwrap()
    }

    #[test]
    fn sphere_rules_have_correct_area() {
        for (n, area) in [(1, 2.0), (2, 2.0 * PI), (3, 4.0 * PI), (4, 2.0 * PI * PI)] {
            // the latitude rule for n ≥ 4 is not exact for the cos weight
            let tol = if n < 4 { 1e-12 } else { 1e-8 };
            let rule = SphereRule::new(n, 2);
            let s: f64 = (0..rule.len()).map(|k| rule.weight(k)).sum();
            assert!((s - area).abs() < tol, "n={n}: {s}");
            // second moment of a coordinate: area / n
            let m2: f64 = (0..rule.len()).map(|k| rule.weight(k) * rule.direction(k)[0].powi(2)).sum();
            assert!((m2 - area / n as f64).abs() < tol, "n={n}");
        }
    }

    #[test]
    fn radial_closed_form_matches_direct_rule() {
        let fine = gauss_legendre(60);
        let short = gauss_legendre(10);
        let p = [0.3, -1.0, 0.5, 0.25];
        for &(b, lo, hi) in &[(0.0, 0.0, 5.0), (2.5, 0.0, 3.0), (-4.0, 0.2, 9.0), (1.0, 0.0, 0.4), (-9.0, 7.0, 12.0)] {
            let direct: f64 = {
                let m = 40;
                (0..m)
                    .map(|k| {
                        let a = lo + (hi - lo) * k as f64 / m as f64;
                        let c = lo + (hi - lo) * (k + 1) as f64 / m as f64;
                        fine.integrate(a, c, |t| horner(&p, t) * (-0.25 * (t + b) * (t + b)).exp())
                    })
                    .sum()
            };
            let got = gauss_poly_radial(&p, b, lo, hi, 14.0, &short);
            assert!((got - direct).abs() < 1e-12 * direct.abs().max(1.0), "b={b}: {got} vs {direct}");
        }
    }

    #[test]
    fn region_rays_with_hole_and_clip() {
        let mut reg = SliceRegion::ellipsoid(disc(0.0, 2.0));
        reg.hole = Some(disc(1.0, 0.5));
        let ints = reg.ray(&[0.0, 0.0], &[1.0, 0.0]);
        assert_eq!(ints.as_slice().len(), 2);
        assert!((ints.total_length() - 1.0).abs() < 1e-14);
        reg.hole = None;
        reg.clip = Some(disc(2.0, 1.0));
        let ints = reg.ray(&[0.0, 0.0], &[1.0, 0.0]);
        assert!((ints.as_slice()[0].0 - 1.0).abs() < 1e-14);
        assert!((ints.as_slice()[0].1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn polar_area_of_annulus_and_lens() {
        let rules = AngularRules::new(2);
        let mut reg = SliceRegion::ellipsoid(disc(0.0, 2.0));
        reg.hole = Some(disc(0.0, 1.0));
        let (a, _) = polar_on_region(&reg, &DVector::zeros(2), &DMatrix::identity(2, 2), &rules, 1e-12, 0.0, |_| 1.0);
        assert!((a - 3.0 * PI).abs() < 1e-10);
        // lens of two unit discs at distance 1: 2π/3 - √3/2
        let mut reg = SliceRegion::ellipsoid(disc(0.0, 1.0));
        reg.clip = Some(disc(1.0, 1.0));
        let p = DVector::from_column_slice(&[0.5, 0.0]);
        let (a, _) = polar_on_region(&reg, &p, &DMatrix::identity(2, 2), &rules, 1e-12, 0.0, |_| 1.0);
        // corners of the lens limit the angular convergence
        assert!((a - (2.0 * PI / 3.0 - 3f64.sqrt() / 2.0)).abs() < 1e-6, "{a}");
    }

    #[test]
    fn gaussian_mass_on_large_disc() {
        // whitened integral over the whole plane is (4π)^{n/2}
        let reg = SliceRegion::ellipsoid(disc(0.0, 100.0));
        let m = DVector::from_column_slice(&[0.5, -0.2]);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.5]);
        let k = DMatrix::zeros(2, 2);
        let g = GaussQuadratic { mean: &m, chol: &l, k: &k, w_center: &m, k0: 1.0 };
        let (v, _) = gauss_quadratic_on_region(&g, &reg, 1e-13, 0.0);
        assert!((v - 4.0 * PI).abs() < 1e-11);
    }

    #[test]
    fn gaussian_on_disc_with_centred_hole() {
        // the hole removes 4π(1 - e^{-ρ²/4}) of the isotropic mass
        let mut reg = SliceRegion::ellipsoid(disc(0.0, 100.0));
        reg.hole = Some(disc(0.5, 0.7));
        let m = DVector::from_column_slice(&[0.5, 0.0]);
        let l = DMatrix::identity(2, 2);
        let k = DMatrix::zeros(2, 2);
        let g = GaussQuadratic { mean: &m, chol: &l, k: &k, w_center: &m, k0: 1.0 };
        let (v, _) = gauss_quadratic_on_region(&g, &reg, 1e-12, 0.0);
        let expect = 4.0 * PI * (-0.49f64 / 4.0).exp();
        assert!((v - expect).abs() < 1e-10, "{v} vs {expect}");
    }
}
