//! Block-structured Kolmogorov operators `div(A∇) + <Bx,∇> - ∂t` and the
//! homogeneous group they live on.
//!
//! The diffusion matrix carries a single symmetric positive definite block
//! `A0` in its top-left corner; the drift matrix is block sub-diagonal with
//! full-row-rank blocks `B_j : R^{p_{j-1}} -> R^{p_j}`. Under these
//! assumptions `B` is nilpotent, so `E(τ) = exp(-τB)` is a finite sum and
//! the group law
//!
//! ```text
//! (x, t) ∘ (ξ, τ) = (ξ + E(τ) x, t + τ)
//! ```
//!
//! is polynomial in every coordinate.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::covariance::MatrixPolynomial;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("A0 is not symmetric (asymmetry {0:e})")]
    NonSymmetricA0(f64),
    #[error("A0 is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefiniteA0(f64),
    #[error("drift block B{0} does not have full row rank")]
    RankDeficientBlock(usize),
    #[error("block sizes must be positive and non-increasing, got {0:?}")]
    BlockSizeMonotonicityViolated(Vec<usize>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("operator entries must be finite")]
    NonFinite,
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveLambda(f64),
}

/// A point `z = (x, t)` of the group `R^n × R`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPoint {
    pub x: DVector<f64>,
    pub t: f64,
}

impl GroupPoint {
    pub fn new(x: DVector<f64>, t: f64) -> Self {
        Self { x, t }
    }

    pub fn from_slice(x: &[f64], t: f64) -> Self {
        Self { x: DVector::from_column_slice(x), t }
    }

    /// The neutral element `(0, 0)` in dimension `n`.
    pub fn origin(n: usize) -> Self {
        Self { x: DVector::zeros(n), t: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|v| v.is_finite())
    }

    /// Largest absolute coordinate, time included.
    pub fn max_abs(&self) -> f64 {
        self.x.iter().fold(self.t.abs(), |m, v| m.max(v.abs()))
    }
}

/// A validated operator together with the data of its homogeneous group.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    n: usize,
    block_sizes: Vec<usize>,
    a0: DMatrix<f64>,
    b_blocks: Vec<DMatrix<f64>>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: usize,
    /// Dilation exponent `2j + 1` of every spatial coordinate.
    weights: Vec<u32>,
    exp: MatrixPolynomial,
}

const PD_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;
const SYM_TOL: f64 = 1e-12;

/// Checks the structural assumptions and assembles `A`, `B` and the group data.
pub fn validate_operator(
    n: usize,
    block_sizes: &[usize],
    a0: DMatrix<f64>,
    b_blocks: Vec<DMatrix<f64>>,
) -> Result<OperatorSpec, OperatorError> {
    if block_sizes.is_empty() {
        return Err(OperatorError::DimensionMismatch("no blocks given".into()));
    }
    if block_sizes.iter().sum::<usize>() != n {
        return Err(OperatorError::DimensionMismatch(format!(
            "block sizes {block_sizes:?} do not sum to n = {n}"
        )));
    }
    if block_sizes.iter().any(|&p| p == 0) || block_sizes.windows(2).any(|w| w[1] > w[0]) {
        return Err(OperatorError::BlockSizeMonotonicityViolated(block_sizes.to_vec()));
    }
    let p0 = block_sizes[0];
    if a0.nrows() != p0 || a0.ncols() != p0 {
        return Err(OperatorError::DimensionMismatch(format!(
            "A0 is {}x{}, expected {p0}x{p0}",
            a0.nrows(),
            a0.ncols()
        )));
    }
    let r = block_sizes.len() - 1;
    if b_blocks.len() != r {
        return Err(OperatorError::DimensionMismatch(format!(
            "expected {r} drift blocks, got {}",
            b_blocks.len()
        )));
    }
    for (j, bj) in b_blocks.iter().enumerate() {
        let (rows, cols) = (block_sizes[j + 1], block_sizes[j]);
        if bj.nrows() != rows || bj.ncols() != cols {
            return Err(OperatorError::DimensionMismatch(format!(
                "B{} is {}x{}, expected {rows}x{cols}",
                j + 1,
                bj.nrows(),
                bj.ncols()
            )));
        }
    }
    if a0.iter().chain(b_blocks.iter().flat_map(|b| b.iter())).any(|v| !v.is_finite()) {
        return Err(OperatorError::NonFinite);
    }

    let scale = a0.amax().max(f64::MIN_POSITIVE);
    let asym = (&a0 - a0.transpose()).amax();
    if asym > SYM_TOL * scale {
        return Err(OperatorError::NonSymmetricA0(asym));
    }
    let eig = a0.clone().symmetric_eigen().eigenvalues;
    let min_eig = eig.min();
    let norm = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(min_eig > PD_TOL * norm) || norm == 0.0 {
        return Err(OperatorError::NotPositiveDefiniteA0(min_eig));
    }
    for (j, bj) in b_blocks.iter().enumerate() {
        let sv = bj.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax).count();
        if smax == 0.0 || rank < bj.nrows() {
            return Err(OperatorError::RankDeficientBlock(j + 1));
        }
    }

    let offsets: Vec<usize> = block_sizes
        .iter()
        .scan(0, |acc, &p| {
            let o = *acc;
            *acc += p;
            Some(o)
        })
        .collect();
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (p0, p0)).copy_from(&a0);
    let mut b = DMatrix::zeros(n, n);
    for (j, bj) in b_blocks.iter().enumerate() {
        b.view_mut((offsets[j + 1], offsets[j]), (bj.nrows(), bj.ncols())).copy_from(bj);
    }

    // Nilpotency is structural; the power is formed only to assert it.
    let mut power = DMatrix::identity(n, n);
    for _ in 0..=r {
        power = &b * &power;
    }
    assert!(power.iter().all(|&v| v == 0.0), "block sub-diagonal drift must be nilpotent");

    let weights: Vec<u32> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(j, &p)| std::iter::repeat_n(2 * j as u32 + 1, p))
        .collect();
    let q = weights.iter().map(|&w| w as usize).sum::<usize>() + 2;

    // E(s) = Σ_k s^k (-B)^k / k!
    let mut coeffs = Vec::with_capacity(r + 1);
    let mut term = DMatrix::identity(n, n);
    coeffs.push(term.clone());
    for k in 1..=r {
        term = -(&b * &term) / k as f64;
        coeffs.push(term.clone());
    }
    let exp = MatrixPolynomial::new(coeffs);

    Ok(OperatorSpec { n, block_sizes: block_sizes.to_vec(), a0, b_blocks, a, b, q, weights, exp })
}

impl OperatorSpec {
    /// The heat operator `Δ - ∂t` on `R^n`.
    pub fn heat(n: usize) -> Self {
        validate_operator(n, &[n], DMatrix::identity(n, n), vec![])
            .expect("heat operator is always valid")
    }

    /// `∂²_x + x ∂_y - ∂_t` on `R^2 × R`.
    pub fn kolmogorov_prototype() -> Self {
        validate_operator(
            2,
            &[1, 1],
            DMatrix::from_element(1, 1, 1.0),
            vec![DMatrix::from_element(1, 1, 1.0)],
        )
        .expect("prototype is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Number of drift blocks `r`.
    pub fn depth(&self) -> usize {
        self.block_sizes.len() - 1
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    pub fn b_blocks(&self) -> &[DMatrix<f64>] {
        &self.b_blocks
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Homogeneous dimension `Q = Σ (2j+1) p_j + 2`.
    pub fn homogeneous_dimension(&self) -> usize {
        self.q
    }

    pub fn spatial_weights(&self) -> &[u32] {
        &self.weights
    }

    /// True when there is no drift, i.e. a (possibly anisotropic) heat operator.
    pub fn is_heat(&self) -> bool {
        self.block_sizes.len() == 1
    }

    /// The polynomial `s ↦ E(s) = exp(-sB)`.
    pub fn exp_polynomial(&self) -> &MatrixPolynomial {
        &self.exp
    }

    pub fn exp_at(&self, s: f64) -> DMatrix<f64> {
        self.exp.eval(s)
    }

    /// `z ∘ w = (w.x + E(w.t) z.x, z.t + w.t)`.
    pub fn compose(&self, z: &GroupPoint, w: &GroupPoint) -> GroupPoint {
        let x = &w.x + self.exp.eval(w.t) * &z.x;
        GroupPoint { x, t: z.t + w.t }
    }

    /// `(x, t)^{-1} = (-E(-t) x, -t)`.
    pub fn inverse(&self, z: &GroupPoint) -> GroupPoint {
        GroupPoint { x: -(self.exp.eval(-z.t) * &z.x), t: -z.t }
    }

    /// Jacobian of `δ_λ`: `diag(λ I_{p0}, λ³ I_{p1}, …, λ^{2r+1} I_{pr}, λ²)`.
    pub fn dilation_matrix(&self, lambda: f64) -> DMatrix<f64> {
        let mut diag: Vec<f64> = self.weights.iter().map(|&w| lambda.powi(w as i32)).collect();
        diag.push(lambda * lambda);
        DMatrix::from_diagonal(&DVector::from_vec(diag))
    }

    pub fn dilate(&self, lambda: f64, z: &GroupPoint) -> Result<GroupPoint, OperatorError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(OperatorError::NonPositiveLambda(lambda));
        }
        let x = DVector::from_iterator(
            self.n,
            z.x.iter().zip(&self.weights).map(|(v, &w)| v * lambda.powi(w as i32)),
        );
        Ok(GroupPoint { x, t: lambda * lambda * z.t })
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        if self.is_heat() {
            format!("heat operator specialization on R^{}", self.n)
        } else {
            format!("Kolmogorov-type operator, blocks {:?}", self.block_sizes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn heat_line_has_q3() {
        let spec = validate_operator(1, &[1], m(1, 1, &[1.0]), vec![]).unwrap();
        assert_eq!(spec.homogeneous_dimension(), 3);
        assert!(spec.is_heat());
        assert_eq!(spec.b().amax(), 0.0);
    }

    #[test]
    fn prototype_q_matches_dilation_determinant() {
        let spec = OperatorSpec::kolmogorov_prototype();
        assert_eq!(spec.homogeneous_dimension(), 6);
        // det D(λ) = λ^Q recovered from two dilation factors
        for lambda in [0.5_f64, 2.0, 3.0] {
            let det: f64 = spec.dilation_matrix(lambda).diagonal().iter().product();
            let exponent = det.ln() / lambda.ln();
            assert!((exponent - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite_a0() {
        let err = validate_operator(2, &[1, 1], m(1, 1, &[-1.0]), vec![m(1, 1, &[1.0])]).unwrap_err();
        assert!(matches!(err, OperatorError::NotPositiveDefiniteA0(_)));
    }

    #[test]
    fn rejects_structural_violations() {
        let err = validate_operator(2, &[2], m(2, 2, &[1.0, 0.5, 0.0, 1.0]), vec![]).unwrap_err();
        assert!(matches!(err, OperatorError::NonSymmetricA0(_)));

        let err = validate_operator(3, &[1, 2], m(1, 1, &[1.0]), vec![m(2, 1, &[1.0, 1.0])]).unwrap_err();
        assert!(matches!(err, OperatorError::BlockSizeMonotonicityViolated(_)));

        let err = validate_operator(3, &[2, 1], DMatrix::identity(2, 2), vec![m(1, 2, &[0.0, 0.0])]).unwrap_err();
        assert_eq!(err, OperatorError::RankDeficientBlock(1));

        let err = validate_operator(4, &[2, 1], DMatrix::identity(2, 2), vec![m(1, 2, &[1.0, 0.0])]).unwrap_err();
        assert!(matches!(err, OperatorError::DimensionMismatch(_)));

        let err = validate_operator(3, &[2, 1], DMatrix::identity(2, 2), vec![m(2, 1, &[1.0, 0.0])]).unwrap_err();
        assert!(matches!(err, OperatorError::DimensionMismatch(_)));
    }

    #[test]
    fn rank_deficient_second_block() {
        let err = validate_operator(
            4,
            &[2, 1, 1],
            DMatrix::identity(2, 2),
            vec![m(1, 2, &[1.0, 0.0]), m(1, 1, &[0.0])],
        )
        .unwrap_err();
        assert_eq!(err, OperatorError::RankDeficientBlock(2));
    }

    #[test]
    fn neutral_element_and_heat_group() {
        let spec = OperatorSpec::kolmogorov_prototype();
        let z = GroupPoint::from_slice(&[0.3, -1.2], 0.7);
        let e = GroupPoint::origin(2);
        assert_eq!(spec.compose(&z, &e), z);
        assert_eq!(spec.compose(&e, &z), z);

        let heat = OperatorSpec::heat(2);
        let w = GroupPoint::from_slice(&[1.0, 2.0], -0.5);
        let zw = heat.compose(&z, &w);
        let expect = GroupPoint::from_slice(&[1.3, 0.8], 0.2);
        assert!((zw.x - expect.x).amax() < 1e-15 && (zw.t - expect.t).abs() < 1e-15);
        assert_eq!(heat.inverse(&w), GroupPoint::from_slice(&[-1.0, -2.0], 0.5));
    }

    #[test]
    fn prototype_compose_and_inverse_by_hand() {
        let spec = OperatorSpec::kolmogorov_prototype();
        // E(1) = I - B
        let z = GroupPoint::from_slice(&[1.0, 0.0], 0.0);
        let w = GroupPoint::from_slice(&[0.0, 0.0], 1.0);
        assert_eq!(spec.compose(&z, &w), GroupPoint::from_slice(&[1.0, -1.0], 1.0));
        // E(-1) = I + B
        let z = GroupPoint::from_slice(&[1.0, 0.0], 1.0);
        assert_eq!(spec.inverse(&z), GroupPoint::from_slice(&[-1.0, -1.0], -1.0));
        assert_eq!(spec.inverse(&GroupPoint::origin(2)), GroupPoint::origin(2));
    }

    #[test]
    fn dilations() {
        let heat = OperatorSpec::heat(1);
        let z = GroupPoint::from_slice(&[1.5], -2.0);
        assert_eq!(heat.dilate(1.0, &z).unwrap(), z);
        assert_eq!(heat.dilate(2.0, &z).unwrap(), GroupPoint::from_slice(&[3.0], -8.0));

        let spec = OperatorSpec::kolmogorov_prototype();
        let z = GroupPoint::from_slice(&[1.0, 1.0], 1.0);
        assert_eq!(spec.dilate(2.0, &z).unwrap(), GroupPoint::from_slice(&[2.0, 8.0], 4.0));
        assert_eq!(spec.dilate(0.0, &z), Err(OperatorError::NonPositiveLambda(0.0)));
        assert!(spec.dilate(-1.0, &z).is_err());
    }
}
