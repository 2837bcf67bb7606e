mod common;

use std::f64::consts::PI;

use common::{evaluator, operators, rel_close};
use kolmoball_core::quadrature::ball_volume;
use kolmoball_core::{ball_time_extent, GroupPoint, LBall, Membership, OperatorSpec, QuadratureConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `det C(s) = det C(1) s^{Q-2}` solved for `(4π)^{-n/2} det C(s)^{-1/2} = 1/r`.
fn s_max_closed_form(spec: &OperatorSpec, r: f64) -> f64 {
    let n = spec.n() as f64;
    let q = spec.homogeneous_dimension() as f64;
    let d1 = evaluator(spec).model().covariance_at(1.0).determinant();
    (r * r * (4.0 * PI).powf(-n) / d1).powf(1.0 / (q - 2.0))
}

/// `|Ω_r| = ∫_0^S ω_n ρ(s)^{n/2} √det C(s) ds` with `ρ = 2(Q-2) ln(S/s)`,
/// which integrates to `π^{n/2} (2(Q-2))^{n/2} √det C(1) S^{a+1} / (a+1)^{n/2+1}`,
/// `a = (Q-2)/2`.
fn volume_closed_form(spec: &OperatorSpec, r: f64) -> f64 {
    let n = spec.n() as f64;
    let q = spec.homogeneous_dimension() as f64;
    let a = (q - 2.0) / 2.0;
    let d1 = evaluator(spec).model().covariance_at(1.0).determinant();
    let s = s_max_closed_form(spec, r);
    PI.powf(n / 2.0) * (2.0 * (q - 2.0)).powf(n / 2.0) * d1.sqrt() * s.powf(a + 1.0) / (a + 1.0).powf(n / 2.0 + 1.0)
}

#[test]
fn time_extent_matches_closed_form() {
    for (name, spec) in operators() {
        let ev = evaluator(&spec);
        for r in [0.01, 1.0, 7.5, 300.0] {
            let s = ball_time_extent(r, &ev).unwrap();
            assert!(rel_close(s, s_max_closed_form(&spec, r), 1e-13), "{name} r={r}");
        }
    }
}

#[test]
fn time_extent_by_hand() {
    let heat = evaluator(&OperatorSpec::heat(1));
    assert!((ball_time_extent((4.0 * PI).sqrt(), &heat).unwrap() - 1.0).abs() < 1e-14);
    let proto = evaluator(&OperatorSpec::kolmogorov_prototype());
    assert!((ball_time_extent(2.0 * PI / 3f64.sqrt(), &proto).unwrap() - 1.0).abs() < 1e-14);
    assert!(ball_time_extent(0.0, &proto).is_err());
    assert!(ball_time_extent(-1.0, &proto).is_err());
}

#[test]
fn level_vanishes_at_the_extent() {
    for (name, spec) in operators() {
        let ball = LBall::at_origin(evaluator(&spec), 2.0).unwrap();
        let s = ball.s_max();
        assert!(ball.level(s * (1.0 - 1e-12)).abs() < 1e-9, "{name}");
        assert!(ball.slice(s).is_err());
        assert!(ball.slice(0.0).is_err());
    }
}

#[test]
fn volume_matches_closed_form() {
    let cfg = QuadratureConfig { rel_tol: 1e-10, ..QuadratureConfig::default() };
    for (name, spec) in operators() {
        for r in [0.5, 3.0] {
            let ball = LBall::at_origin(evaluator(&spec), r).unwrap();
            let v = ball_volume(&ball, &cfg);
            let exact = volume_closed_form(&spec, r);
            assert!(rel_close(v.value, exact, 1e-8), "{name} r={r}: {} vs {exact}", v.value);
        }
    }
}

#[test]
fn membership_by_slice_agrees_with_gamma() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, spec) in operators() {
        let ev = evaluator(&spec);
        let z0 = GroupPoint::from_slice(&vec![0.3; spec.n()], 0.7);
        let ball = LBall::new(ev.clone(), z0.clone(), 1.5).unwrap();
        let bbox = ball.bounding_box();
        let mut inside = 0;
        for _ in 0..4000 {
            let coords: Vec<f64> = (0..=spec.n()).map(|i| rng.random_range(bbox.lo[i]..bbox.hi[i])).collect();
            let z = GroupPoint::from_slice(&coords[..spec.n()], coords[spec.n()]);
            let by_gamma = ev.gamma(&z0, &z) > 1.0 / ball.r();
            if ball.classify(&z) != Membership::Boundary {
                assert_eq!(ball.contains(&z), by_gamma, "{name} {z:?}");
                assert_eq!(ball.contains_by_slice(&z), by_gamma, "{name} {z:?}");
            }
            inside += by_gamma as usize;
        }
        assert!(inside > 100, "{name}: box too loose, {inside} hits");
    }
}

#[test]
fn membership_examples() {
    let ev = evaluator(&OperatorSpec::heat(1));
    let ball = LBall::at_origin(ev, (4.0 * PI).sqrt()).unwrap();
    assert!(ball.contains(&GroupPoint::from_slice(&[0.0], -0.5)));
    assert!(!ball.contains(&GroupPoint::from_slice(&[0.0], 0.0)));
    assert!(!ball.contains(&GroupPoint::from_slice(&[0.0], 0.3)));
    assert!(!ball.contains(&GroupPoint::from_slice(&[0.0], -1.0)));
}

#[test]
fn bounding_box_shrinks_to_the_centre() {
    for (name, spec) in operators() {
        let z0 = GroupPoint::from_slice(&vec![1.0; spec.n()], 2.0);
        let mut last = f64::INFINITY;
        for r in [1.0, 1e-4, 1e-8, 1e-16] {
            let b = LBall::new(evaluator(&spec), z0.clone(), r).unwrap().bounding_box();
            let d = b.diameter();
            assert!(d < last, "{name}");
            assert!(b.contains(&z0) || (b.hi[spec.n()] - z0.t).abs() < 1e-12, "{name}");
            last = d;
        }
        assert!(last < 1e-2, "{name}: {last}");
    }
}

fn point_in_box(n: usize) -> impl Strategy<Value = (Vec<f64>, f64, Vec<f64>, f64)> {
    (
        prop::collection::vec(-1.5..1.5f64, n),
        -1.5..0.0f64,
        prop::collection::vec(-2.0..2.0f64, n),
        -2.0..2.0f64,
    )
}

#[test]
fn translation_moves_membership() {
    for (name, spec) in operators() {
        let ev = evaluator(&spec);
        let ball = LBall::at_origin(ev, 3.0).unwrap();
        let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(500));
        runner
            .run(&point_in_box(spec.n()), |(x, t, wx, wt)| {
                let z = GroupPoint::from_slice(&x, t);
                let w = GroupPoint::from_slice(&wx, wt);
                let moved = ball.translate(&w);
                let wz = spec.compose(&w, &z);
                if ball.classify(&z) != Membership::Boundary && moved.classify(&wz) != Membership::Boundary {
                    prop_assert_eq!(ball.contains(&z), moved.contains(&wz));
                }
                Ok(())
            })
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn dilation_moves_membership() {
    for (name, spec) in operators() {
        let ev = evaluator(&spec);
        let ball = LBall::at_origin(ev, 3.0).unwrap();
        let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(500));
        runner
            .run(&(point_in_box(spec.n()), 0.3..3.0f64), |((x, t, _, _), lambda)| {
                let z = GroupPoint::from_slice(&x, t);
                let big = ball.dilate(lambda).unwrap();
                let dz = spec.dilate(lambda, &z).unwrap();
                if ball.classify(&z) != Membership::Boundary && big.classify(&dz) != Membership::Boundary {
                    prop_assert_eq!(ball.contains(&z), big.contains(&dz));
                }
                Ok(())
            })
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        let same = ball.dilate(1.0).unwrap();
        assert_eq!(same.r(), ball.r());
        assert_eq!(same.s_max(), ball.s_max());
    }
}

#[test]
fn slices_are_ellipsoids_with_the_right_volume() {
    for (name, spec) in operators() {
        let ball = LBall::at_origin(evaluator(&spec), 2.0).unwrap();
        for frac in [0.1, 0.5, 0.9] {
            let s = frac * ball.s_max();
            let e = ball.slice(s).unwrap();
            assert!(rel_close(e.volume(), ball.slice_volume(s), 1e-12), "{name}");
            // frame maps the unit sphere onto the boundary
            let u = nalgebra::DVector::from_fn(spec.n(), |i, _| if i == 0 { 1.0 } else { 0.0 });
            let x = e.center() + e.frame() * u;
            let z = GroupPoint::new(x, -s);
            let g = ball.evaluator().gamma(ball.z0(), &z);
            assert!(rel_close(g, 1.0 / ball.r(), 1e-10), "{name} frac={frac}: {g}");
        }
    }
}
