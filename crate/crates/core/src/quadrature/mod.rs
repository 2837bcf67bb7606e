//! Integration over balls and their slices.

pub mod gauss;
pub mod mc;
pub mod moments;
pub mod slice;
pub mod time;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ball::LBall;
use crate::fundamental::GammaEvaluator;
use crate::harmonic::AnisoPolynomial;
use crate::operator::GroupPoint;

pub use mc::{mc_sample_ball, BallSampler};
pub use moments::{ellipsoid_polynomial_integral, MonomialMoments, SpatialPolynomial};
pub use slice::{AngularRules, SliceRegion};
pub use time::{Estimate, TimeIntegrator, TimeRule, TimeSpan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Relative tolerance of the adaptive time integral.
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Evaluation budget of one time integral.
    pub max_evals: usize,
    /// Maximum number of dyadic cells toward a pole.
    pub endpoint_refinement: usize,
    /// Relative tolerance of the angular refinement on each slice.
    pub slice_rel_tol: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let t = TimeRule::default();
        Self {
            rel_tol: t.rel_tol,
            abs_tol: t.abs_tol,
            max_evals: t.max_evals,
            endpoint_refinement: t.endpoint_refinement,
            slice_rel_tol: 1e-10,
            mc_samples: 100_000,
            seed: 0,
        }
    }
}

impl QuadratureConfig {
    pub fn time_rule(&self) -> TimeRule {
        TimeRule {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_evals: self.max_evals,
            endpoint_refinement: self.endpoint_refinement,
        }
    }

    pub fn integrator(&self) -> TimeIntegrator {
        TimeIntegrator::new(self.time_rule())
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rel_tol > 0.0) || !(self.slice_rel_tol > 0.0) || self.abs_tol < 0.0 {
            return Err("tolerances must be positive".into());
        }
        if self.mc_samples == 0 || self.max_evals == 0 {
            return Err("sample and evaluation counts must be positive".into());
        }
        Ok(())
    }
}

/// What to integrate over a ball.
#[derive(Clone, Copy)]
pub enum BallIntegrand<'a> {
    /// `u(ζ)`; exact on every slice.
    Polynomial(&'a AnisoPolynomial),
    /// `u(ζ) W(z0⁻¹∘ζ)`; exact on every slice.
    PolynomialTimesW(&'a AnisoPolynomial),
    /// Anything else, by seeded Monte Carlo.
    Callable(&'a (dyn Fn(&GroupPoint) -> f64 + Sync)),
}

/// `∫_{slice} u(x, t0 - s) [W(x - c(s), -s)] dx`, exact up to rounding.
pub fn polynomial_slice_integral(
    ball: &LBall,
    s: f64,
    u: &AnisoPolynomial,
    times_w: bool,
    moments: &MonomialMoments,
) -> f64 {
    let Ok(e) = ball.slice(s) else { return 0.0 };
    let t = ball.z0().t - s;
    let t_frame = e.frame();
    // u(c + T y)
    let mut integrand = u.at_time(t).compose_affine(e.center(), t_frame);
    if times_w {
        let k = ball.evaluator().kernel_form(-s).expect("s > 0");
        // (T y)^T K (T y); the slice is centred at c(s), the W argument too
        let kk = t_frame.transpose() * k * t_frame;
        let q = SpatialPolynomial::quadratic_form(&kk, &DVector::zeros(ball.n()));
        integrand = integrand.mul(&q);
    }
    integrand.unit_ball_integral(moments) * t_frame.determinant().abs()
}

/// `∫_Ω f`, exact slices for polynomial integrands and Monte Carlo for
/// callables.
pub fn integrate_over_ball(f: BallIntegrand<'_>, ball: &LBall, cfg: &QuadratureConfig) -> Estimate {
    match f {
        BallIntegrand::Polynomial(u) | BallIntegrand::PolynomialTimesW(u) => {
            let times_w = matches!(f, BallIntegrand::PolynomialTimesW(_));
            let moments = MonomialMoments::new();
            cfg.integrator().integrate(
                |s| (polynomial_slice_integral(ball, s, u, times_w, &moments), 0.0),
                &TimeSpan::ball(ball.s_max()),
            )
        }
        BallIntegrand::Callable(g) => {
            let volume = ball_volume(ball, cfg).value;
            BallSampler::new(ball).integrate(g, cfg.mc_samples, cfg.seed, volume)
        }
    }
}

/// `|Ω|` as the time integral of slice volumes.
pub fn ball_volume(ball: &LBall, cfg: &QuadratureConfig) -> Estimate {
    cfg.integrator().integrate(|s| (ball.slice_volume(s), 0.0), &TimeSpan::ball(ball.s_max()))
}

/// `∫_{R^n} γ(x, t) dx` by tensor Gauss–Hermite in the eigenbasis of `C(t)`.
pub fn gaussian_mass(ev: &GammaEvaluator, t: f64, order: usize) -> f64 {
    let n = ev.n();
    let eig = ev.model().covariance_at(t).symmetric_eigen();
    let gh = gauss::gauss_hermite(order);
    // x = V diag(2√λ) y turns ¼<C⁻¹x,x> into |y|²
    let scale: DMatrix<f64> = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 2.0 * l.max(0.0).sqrt()));
    let jac: f64 = eig.eigenvalues.iter().map(|l| 2.0 * l.max(0.0).sqrt()).product();
    let mut idx = vec![0usize; n];
    let mut acc = 0.0;
    loop {
        let y = DVector::from_fn(n, |i, _| gh.nodes[idx[i]]);
        let w: f64 = idx.iter().map(|&k| gh.weights[k]).product();
        let x = &scale * &y;
        acc += w * y.norm_squared().exp() * ev.gamma_at(&GroupPoint::new(x, t));
        let mut i = 0;
        loop {
            if i == n {
                return acc * jac;
            }
            idx[i] += 1;
            if idx[i] < order {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}
