#![allow(dead_code)]

use std::sync::Arc;

use kolmoball_core::{validate_operator, GammaEvaluator, OperatorSpec};
use nalgebra::DMatrix;

/// Two-block operator on R³ with a non-diagonal diffusion.
pub fn chain() -> OperatorSpec {
    validate_operator(
        3,
        &[2, 1],
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.5])],
    )
    .unwrap()
}

pub fn operators() -> Vec<(&'static str, OperatorSpec)> {
    vec![
        ("heat1", OperatorSpec::heat(1)),
        ("heat2", OperatorSpec::heat(2)),
        ("prototype", OperatorSpec::kolmogorov_prototype()),
        ("chain", chain()),
    ]
}

pub fn evaluator(spec: &OperatorSpec) -> Arc<GammaEvaluator> {
    Arc::new(GammaEvaluator::new(spec.clone()))
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
