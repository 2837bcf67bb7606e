mod common;

use common::operators;
use kolmoball_core::{CovarianceModel, OperatorSpec};
use nalgebra::DMatrix;

/// `exp(-tB)` by nalgebra's Padé scaling and squaring.
fn exp_minus(spec: &OperatorSpec, t: f64) -> DMatrix<f64> {
    (spec.b() * (-t)).exp()
}

/// `∫_0^t E A Eᵀ` by composite Simpson on a fine grid.
fn covariance_oracle(spec: &OperatorSpec, t: f64) -> DMatrix<f64> {
    let m = 2000;
    let h = t / m as f64;
    let f = |s: f64| {
        let e = exp_minus(spec, s);
        &e * spec.a() * e.transpose()
    };
    let mut acc = f(0.0) + f(t);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(k as f64 * h) * w;
    }
    acc * (h / 3.0)
}

#[test]
fn exponential_polynomial_matches_matrix_exponential() {
    for (name, spec) in operators() {
        for t in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let diff = (spec.exp_at(t) - exp_minus(&spec, t)).amax();
            assert!(diff < 1e-12, "{name} t={t}: {diff}");
        }
    }
}

#[test]
fn covariance_matches_quadrature_of_the_integrand() {
    for (name, spec) in operators() {
        let model = CovarianceModel::new(&spec);
        for t in [0.1, 1.0, 2.5, -1.0] {
            let c = model.covariance_at(t);
            let oracle = covariance_oracle(&spec, t);
            let diff = (&c - &oracle).amax() / oracle.amax();
            assert!(diff < 1e-10, "{name} t={t}: {diff}");
        }
    }
}

#[test]
fn covariance_derivative_is_the_integrand() {
    let h = 1e-5;
    for (name, spec) in operators() {
        let model = CovarianceModel::new(&spec);
        for t in [0.2, 1.0, 4.0] {
            let fd = (model.covariance_at(t + h) - model.covariance_at(t - h)) / (2.0 * h);
            let e = exp_minus(&spec, t);
            let exact = &e * spec.a() * e.transpose();
            let diff = (fd - &exact).amax();
            assert!(diff < 1e-8, "{name} t={t}: {diff}");
        }
    }
}

#[test]
fn prototype_covariance_by_hand() {
    let model = CovarianceModel::new(&OperatorSpec::kolmogorov_prototype());
    for t in [0.5, 1.0, 2.0, -1.5] {
        let expect = DMatrix::from_row_slice(2, 2, &[t, -t * t / 2.0, -t * t / 2.0, t * t * t / 3.0]);
        let diff = (model.covariance_at(t) - expect).amax();
        assert!(diff <= 4.0 * f64::EPSILON * t.abs().max(1.0).powi(3), "t={t}: {diff}");
    }
    // det C(t) = t⁴ / 12
    assert!((model.det().eval(2.0) - 16.0 / 12.0).abs() < 1e-14);
}

#[test]
fn determinant_is_a_monomial_of_degree_q_minus_two() {
    for (name, spec) in operators() {
        let model = CovarianceModel::new(&spec);
        let q = spec.homogeneous_dimension() as i32;
        let d1 = model.covariance_at(1.0).determinant();
        for t in [0.3, 1.7, 5.0] {
            let dt = model.covariance_at(t).determinant();
            assert!((dt - d1 * t.powi(q - 2)).abs() < 1e-11 * dt.abs(), "{name} t={t}");
            assert!((model.det().eval(t) - dt).abs() < 1e-11 * dt.abs(), "{name} t={t}");
        }
    }
}

#[test]
fn covariance_inverse_round_trip() {
    for (name, spec) in operators() {
        let model = CovarianceModel::new(&spec);
        for t in [0.05, 1.0, 20.0] {
            let c = model.covariance_at(t);
            let inv = model.covariance_inverse_at(t).unwrap();
            let id = &c * &inv.matrix;
            let diff = (id - DMatrix::identity(spec.n(), spec.n())).amax();
            assert!(diff < 1e-9, "{name} t={t}: {diff}");
        }
    }
}
