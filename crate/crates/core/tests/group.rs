mod common;

use common::{operators, rel_close};
use kolmoball_core::{GammaEvaluator, GroupPoint, OperatorError, OperatorSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{RngAlgorithm, TestRng, TestRunner};

const CASES: u32 = 1000;

fn point(n: usize) -> impl Strategy<Value = GroupPoint> {
    (prop::collection::vec(-2.0..2.0f64, n), -2.0..2.0f64).prop_map(|(x, t)| GroupPoint::from_slice(&x, t))
}

fn close_points(a: &GroupPoint, b: &GroupPoint, tol: f64) -> bool {
    let scale = a.max_abs().max(b.max_abs()).max(1.0);
    (a.t - b.t).abs() <= tol * scale && (&a.x - &b.x).amax() <= tol * scale
}

fn run_per_operator<S: Strategy>(
    strat: impl Fn(usize) -> S,
    check: impl Fn(&OperatorSpec, &GammaEvaluator, S::Value) -> Result<(), TestCaseError>,
) {
    for (name, spec) in operators() {
        let ev = GammaEvaluator::new(spec.clone());
        let mut runner = TestRunner::new_with_rng(
            ProptestConfig::with_cases(CASES),
            TestRng::deterministic_rng(RngAlgorithm::ChaCha),
        );
        runner.run(&strat(spec.n()), |v| check(&spec, &ev, v)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn composition_is_associative() {
    run_per_operator(
        |n| (point(n), point(n), point(n)),
        |spec, _, (z, w, v)| {
            let left = spec.compose(&spec.compose(&z, &w), &v);
            let right = spec.compose(&z, &spec.compose(&w, &v));
            prop_assert!(close_points(&left, &right, 1e-10), "{left:?} vs {right:?}");
            Ok(())
        },
    );
}

#[test]
fn inverse_cancels_on_both_sides() {
    run_per_operator(
        |n| point(n),
        |spec, _, z| {
            let e = GroupPoint::origin(spec.n());
            prop_assert!(close_points(&spec.compose(&z, &spec.inverse(&z)), &e, 1e-10));
            prop_assert!(close_points(&spec.compose(&spec.inverse(&z), &z), &e, 1e-10));
            Ok(())
        },
    );
}

#[test]
fn dilation_is_a_group_automorphism() {
    run_per_operator(
        |n| (point(n), point(n), 0.2..5.0f64),
        |spec, _, (z, w, lambda)| {
            let lhs = spec.dilate(lambda, &spec.compose(&z, &w)).unwrap();
            let rhs = spec.compose(&spec.dilate(lambda, &z).unwrap(), &spec.dilate(lambda, &w).unwrap());
            prop_assert!(close_points(&lhs, &rhs, 1e-10), "{lhs:?} vs {rhs:?}");
            Ok(())
        },
    );
}

#[test]
fn gamma_is_homogeneous_of_degree_two_minus_q() {
    run_per_operator(
        |n| (prop::collection::vec(-1.0..1.0f64, n), 0.2..2.0f64, 0.3..3.0f64),
        |spec, ev, (x, t, lambda)| {
            let z = GroupPoint::from_slice(&x, t);
            let q = spec.homogeneous_dimension() as f64;
            let g = ev.gamma_at(&z);
            let gl = ev.gamma_at(&spec.dilate(lambda, &z).unwrap());
            prop_assert!(g > 0.0);
            prop_assert!(rel_close(gl, lambda.powf(2.0 - q) * g, 1e-10), "{gl} vs {}", lambda.powf(2.0 - q) * g);
            Ok(())
        },
    );
}

#[test]
fn kernel_w_is_homogeneous_of_degree_minus_two() {
    run_per_operator(
        |n| (prop::collection::vec(-1.0..1.0f64, n), prop_oneof![-2.0..-0.2f64, 0.2..2.0f64], 0.3..3.0f64),
        |spec, ev, (x, t, lambda)| {
            let z = GroupPoint::from_slice(&x, t);
            let w = ev.kernel_w(&z).unwrap();
            let wl = ev.kernel_w(&spec.dilate(lambda, &z).unwrap()).unwrap();
            prop_assert!((wl - w / (lambda * lambda)).abs() <= 1e-9 * (w / (lambda * lambda)).max(1e-4));
            Ok(())
        },
    );
}

#[test]
fn left_translation_preserves_gamma() {
    // Γ(w∘z, w∘ζ) = Γ(z, ζ)
    run_per_operator(
        |n| (point(n), point(n), point(n)),
        |spec, ev, (z, zeta, w)| {
            let a = ev.gamma(&z, &zeta);
            let b = ev.gamma(&spec.compose(&w, &z), &spec.compose(&w, &zeta));
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12), "{a} vs {b}");
            Ok(())
        },
    );
}

#[test]
fn nonpositive_dilation_is_rejected() {
    let spec = OperatorSpec::kolmogorov_prototype();
    let z = GroupPoint::from_slice(&[1.0, 1.0], 1.0);
    assert!(matches!(spec.dilate(0.0, &z), Err(OperatorError::NonPositiveLambda(_))));
    assert!(matches!(spec.dilate(-1.0, &z), Err(OperatorError::NonPositiveLambda(_))));
}

#[test]
fn prototype_composition_by_hand() {
    // E(τ) = [[1, 0], [-τ, 1]] for B = [[0, 0], [1, 0]]
    let spec = OperatorSpec::kolmogorov_prototype();
    let z = GroupPoint::from_slice(&[1.0, 2.0], 0.5);
    let w = GroupPoint::from_slice(&[-0.5, 0.25], 2.0);
    let c = spec.compose(&z, &w);
    assert!((c.t - 2.5).abs() < 1e-15);
    assert!((&c.x - DVector::from_column_slice(&[0.5, 0.25])).amax() < 1e-15, "{:?}", c.x);
    assert_eq!(spec.homogeneous_dimension(), 6);
    assert_eq!(spec.b(), &DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
}

#[test]
fn heat_kernel_w_is_even_and_matches_the_classical_weight() {
    // ¼ (|x|/t)², so the translation and group forms of the argument agree
    let mut runner = TestRunner::new_with_rng(
        ProptestConfig::with_cases(CASES),
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    for n in [1, 2] {
        let spec = OperatorSpec::heat(n);
        let ev = GammaEvaluator::new(spec.clone());
        let strat = (prop::collection::vec(-2.0..2.0f64, n), -2.0..-0.1f64);
        runner
            .run(&strat, |(x, t)| {
                let z = GroupPoint::from_slice(&x, t);
                let minus = GroupPoint::new(-&z.x, -t);
                let w = ev.kernel_w(&z).unwrap();
                let classical = x.iter().map(|v| v * v).sum::<f64>() / (4.0 * t * t);
                prop_assert!(rel_close(w, classical, 1e-12) || classical < 1e-300);
                prop_assert!(rel_close(ev.kernel_w(&minus).unwrap(), w, 1e-12) || w < 1e-300);
                Ok(())
            })
            .unwrap();
    }
}
