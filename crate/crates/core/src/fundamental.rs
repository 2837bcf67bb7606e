//! The fundamental solution `Γ(z, ζ) = γ(ζ⁻¹ ∘ z)` and the mean-value kernel `W`.
//!
//! `γ(x, t)` vanishes for `t ≤ 0` and is the Gaussian
//! `(4π)^{-n/2} det C(t)^{-1/2} exp(-¼ <C(t)^{-1} x, x>)` for `t > 0`.
//! `W(x, t) = ¼ <A C(t)^{-1} x, C(t)^{-1} x>` is defined for `t ≠ 0`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::covariance::CovarianceModel;
use crate::operator::{GroupPoint, OperatorSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("the kernel W is undefined at t = 0")]
    TimeZero,
    #[error("covariance at t = {0} could not be factored")]
    Degenerate(f64),
}

/// Exponents below this underflow to exact zero.
const UNDERFLOW_EXPONENT: f64 = -745.0;

/// Evaluates `γ`, `Γ` and `W` for one operator.
#[derive(Debug, Clone)]
pub struct GammaEvaluator {
    spec: OperatorSpec,
    model: CovarianceModel,
    normalization: f64,
}

/// `γ(·, t)` at a fixed time `t > 0`: a Gaussian with covariance `2C(t)`.
#[derive(Debug, Clone)]
pub struct GaussianFrame {
    /// Lower Cholesky factor `L` of `C(t)`.
    pub chol: DMatrix<f64>,
    /// `(4π)^{-n/2} det C(t)^{-1/2}`.
    pub peak: f64,
}

impl GaussianFrame {
    /// `γ(x, t)` for the frame's time.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let q = forward_solve_norm2(&self.chol, x);
        gaussian(self.peak, q)
    }

    /// `|L^{-1} x|²`, i.e. `<C(t)^{-1} x, x>`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        forward_solve_norm2(&self.chol, x)
    }
}

#[inline]
pub(crate) fn gaussian(peak: f64, quad: f64) -> f64 {
    let e = -0.25 * quad;
    if e < UNDERFLOW_EXPONENT {
        0.0
    } else {
        peak * e.exp()
    }
}

/// `|L^{-1} x|²` for lower-triangular `L`.
#[inline]
pub(crate) fn forward_solve_norm2(l: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut y = [0.0_f64; 16];
    let mut acc = 0.0;
    if n <= 16 {
        for i in 0..n {
            let mut v = x[i];
            for j in 0..i {
                v -= l[(i, j)] * y[j];
            }
            v /= l[(i, i)];
            y[i] = v;
            acc += v * v;
        }
        acc
    } else {
        let sol = l.solve_lower_triangular(&DVector::from_column_slice(x)).expect("triangular");
        sol.norm_squared()
    }
}

impl GammaEvaluator {
    pub fn new(spec: OperatorSpec) -> Self {
        let model = CovarianceModel::new(&spec);
        let normalization = (4.0 * PI).powf(-(spec.n() as f64) / 2.0);
        Self { spec, model, normalization }
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    /// `(4π)^{-n/2}`.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Gaussian data of `γ(·, t)`; `None` for `t ≤ 0`.
    pub fn frame(&self, t: f64) -> Option<GaussianFrame> {
        if !(t > 0.0) {
            return None;
        }
        let c = self.model.covariance_at(t);
        let chol = c.cholesky()?.unpack();
        let det = self.model.det().eval(t);
        if !(det > 0.0) {
            return None;
        }
        Some(GaussianFrame { chol, peak: self.normalization / det.sqrt() })
    }

    pub fn gamma_at(&self, z: &GroupPoint) -> f64 {
        match self.frame(z.t) {
            Some(f) => f.eval(z.x.as_slice()),
            None => 0.0,
        }
    }

    /// `Γ(z, ζ) = γ(ζ⁻¹ ∘ z)`; positive iff `z.t > ζ.t`.
    pub fn gamma(&self, z: &GroupPoint, zeta: &GroupPoint) -> f64 {
        if !(z.t > zeta.t) {
            return 0.0;
        }
        self.gamma_at(&self.spec.compose(&self.spec.inverse(zeta), z))
    }

    /// Symmetric `K(t)` with `W(x, t) = <K(t) x, x>`.
    pub fn kernel_form(&self, t: f64) -> Result<DMatrix<f64>, KernelError> {
        if t == 0.0 {
            return Err(KernelError::TimeZero);
        }
        let inv = self.model.covariance_inverse_at(t).map_err(|_| KernelError::Degenerate(t))?.matrix;
        let k = inv.transpose() * self.spec.a() * &inv * 0.25;
        Ok((&k + k.transpose()) * 0.5)
    }

    pub fn kernel_w(&self, z: &GroupPoint) -> Result<f64, KernelError> {
        let k = self.kernel_form(z.t)?;
        Ok((&k * &z.x).dot(&z.x).max(0.0))
    }
}
