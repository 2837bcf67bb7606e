//! Exact polynomial forms of `E(s) = exp(-sB)` and of the covariance
//! `C(t) = ∫_0^t E(s) A E(s)^T ds`.
//!
//! Because `B` is nilpotent both are matrix polynomials (degrees `r` and
//! `2r + 1`), so `C` and `det C` are built by exact term-by-term
//! integration instead of quadrature.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::operator::OperatorSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CovarianceError {
    #[error("C(t) vanishes at t = 0")]
    SingularAtZero,
    #[error("C(t) is ill conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("C({0}) failed to factor as a definite matrix")]
    NotDefinite(f64),
}

/// Condition number above which an inverse is flagged.
pub const MAX_CONDITION: f64 = 1e14;

/// Univariate real polynomial `Σ c_k t^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPolynomial {
    coeffs: Vec<f64>,
}

impl ScalarPolynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() <= 1 {
            return Self::new(vec![0.0]);
        }
        Self::new(self.coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        let c = (0..len)
            .map(|k| self.coeffs.get(k).unwrap_or(&0.0) + other.coeffs.get(k).unwrap_or(&0.0))
            .collect();
        Self::new(c)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut c = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Self::new(c)
    }
}

/// Square-matrix-valued polynomial `P(t) = Σ t^k M_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPolynomial {
    coeffs: Vec<DMatrix<f64>>,
}

impl MatrixPolynomial {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Self {
        assert!(!coeffs.is_empty(), "matrix polynomial needs at least one coefficient");
        let n = coeffs[0].nrows();
        assert!(coeffs.iter().all(|m| m.nrows() == n && m.ncols() == n));
        Self { coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// Horner evaluation.
    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let mut acc = self.coeffs.last().unwrap().clone();
        for m in self.coeffs.iter().rev().skip(1) {
            acc *= t;
            acc += m;
        }
        acc
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.coeffs.iter().map(|m| m.transpose()).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let n = self.dim();
        let mut c = vec![DMatrix::zeros(n, n); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Self::new(c)
    }

    pub fn mul_const_right(&self, m: &DMatrix<f64>) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * m).collect())
    }

    /// `t ↦ ∫_0^t P(s) ds`.
    pub fn integrate_from_zero(&self) -> Self {
        let n = self.dim();
        let mut c = vec![DMatrix::zeros(n, n)];
        c.extend(self.coeffs.iter().enumerate().map(|(k, m)| m / (k + 1) as f64));
        Self::new(c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            let n = self.dim();
            return Self::new(vec![DMatrix::zeros(n, n)]);
        }
        Self::new(self.coeffs.iter().enumerate().skip(1).map(|(k, m)| m * k as f64).collect())
    }

    fn symmetrized(mut self) -> Self {
        for m in &mut self.coeffs {
            let s = (&*m + m.transpose()) * 0.5;
            *m = s;
        }
        self
    }

    /// Polynomial entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> ScalarPolynomial {
        ScalarPolynomial::new(self.coeffs.iter().map(|m| m[(i, j)]).collect())
    }
}

/// `E(s) = Σ_k (-s)^k B^k / k!`, a polynomial of degree at most `r`.
pub fn exponential_polynomial(spec: &OperatorSpec) -> MatrixPolynomial {
    spec.exp_polynomial().clone()
}

/// `C(t) = ∫_0^t E(s) A E(s)^T ds`, integrated exactly, coefficients symmetric.
pub fn covariance_polynomial(spec: &OperatorSpec) -> MatrixPolynomial {
    let e = spec.exp_polynomial();
    e.mul_const_right(spec.a()).mul(&e.transpose()).integrate_from_zero().symmetrized()
}

/// `det C(t)` as an exact univariate polynomial.
///
/// Cofactor expansion over the polynomial ring for `n ≤ 4`; above that the
/// polynomial is recovered by least-squares interpolation on Chebyshev nodes.
pub fn det_covariance_polynomial(spec: &OperatorSpec) -> ScalarPolynomial {
    let c = covariance_polynomial(spec);
    let n = c.dim();
    if n <= 4 {
        let entries: Vec<Vec<ScalarPolynomial>> =
            (0..n).map(|i| (0..n).map(|j| c.entry(i, j)).collect()).collect();
        cofactor_det(&entries)
    } else {
        interpolate_det(&c, n * (2 * spec.depth() + 1))
    }
}

fn cofactor_det(m: &[Vec<ScalarPolynomial>]) -> ScalarPolynomial {
    let n = m.len();
    if n == 1 {
        return m[0][0].clone();
    }
    let mut acc = ScalarPolynomial::new(vec![0.0]);
    for (col, pivot) in m[0].iter().enumerate() {
        if pivot.coeffs().iter().all(|&c| c == 0.0) {
            continue;
        }
        let minor: Vec<Vec<ScalarPolynomial>> = m[1..]
            .iter()
            .map(|row| row.iter().enumerate().filter(|&(j, _)| j != col).map(|(_, p)| p.clone()).collect())
            .collect();
        let term = pivot.mul(&cofactor_det(&minor));
        acc = acc.add(&if col % 2 == 0 { term } else { term.scale(-1.0) });
    }
    acc
}

fn interpolate_det(c: &MatrixPolynomial, degree: usize) -> ScalarPolynomial {
    let m = 2 * degree + 1;
    let nodes: Vec<f64> = (0..m)
        .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / m as f64).cos())
        .collect();
    let vander = DMatrix::from_fn(m, degree + 1, |i, j| nodes[i].powi(j as i32));
    let rhs = nalgebra::DVector::from_iterator(m, nodes.iter().map(|&t| c.eval(t).determinant()));
    let sol = vander.svd(true, true).solve(&rhs, 1e-14).expect("svd solve");
    ScalarPolynomial::new(sol.iter().copied().collect())
}

/// Inverse of a definite symmetric matrix together with its condition number.
#[derive(Debug, Clone)]
pub struct SymmetricInverse {
    pub matrix: DMatrix<f64>,
    pub condition: f64,
}

impl SymmetricInverse {
    pub fn is_ill_conditioned(&self) -> bool {
        self.condition > MAX_CONDITION
    }

    pub fn check_conditioning(&self) -> Result<(), CovarianceError> {
        if self.is_ill_conditioned() {
            Err(CovarianceError::IllConditioned(self.condition))
        } else {
            Ok(())
        }
    }
}

/// `E`, `C` and `det C` for one operator, built once and shared.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    exp: MatrixPolynomial,
    cov: MatrixPolynomial,
    det: ScalarPolynomial,
}

impl CovarianceModel {
    pub fn new(spec: &OperatorSpec) -> Self {
        Self {
            exp: exponential_polynomial(spec),
            cov: covariance_polynomial(spec),
            det: det_covariance_polynomial(spec),
        }
    }

    pub fn exp(&self) -> &MatrixPolynomial {
        &self.exp
    }

    pub fn cov(&self) -> &MatrixPolynomial {
        &self.cov
    }

    pub fn det(&self) -> &ScalarPolynomial {
        &self.det
    }

    pub fn covariance_at(&self, t: f64) -> DMatrix<f64> {
        self.cov.eval(t)
    }

    /// `C(t)^{-1}` via a Cholesky factorisation of `±C(t)`.
    pub fn covariance_inverse_at(&self, t: f64) -> Result<SymmetricInverse, CovarianceError> {
        if t == 0.0 {
            return Err(CovarianceError::SingularAtZero);
        }
        let c = self.cov.eval(t);
        let sign = t.signum();
        let chol = (&c * sign).cholesky().ok_or(CovarianceError::NotDefinite(t))?;
        let inverse = chol.inverse() * sign;
        let eig = c.symmetric_eigen().eigenvalues;
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        Ok(SymmetricInverse { matrix: inverse, condition: hi / lo })
    }
}

/// `C(t)` evaluated by Horner's scheme.
pub fn covariance_at(t: f64, spec: &OperatorSpec) -> DMatrix<f64> {
    covariance_polynomial(spec).eval(t)
}

pub fn covariance_inverse_at(t: f64, spec: &OperatorSpec) -> Result<SymmetricInverse, CovarianceError> {
    CovarianceModel::new(spec).covariance_inverse_at(t)
}
