//! One function per experiment kind, each run for a single radius.

use std::sync::Arc;

use kolmoball_core::{
    exterior_test_points, future_mass_check, harmonic_basis, interior_inequality_margin, interior_points,
    lp_condition_norm, mean_value, potential_identity_residual, GammaEvaluator, GroupPoint, LBall, MeanValueInput,
    Perturbation, PotentialError, QuadratureConfig, SlicedDomain,
};

use crate::config::{Experiment, LpMethod, PerturbationKind};
use crate::report::{Detail, MvfEntry, RadiusOutcome};

fn fail(ball: &LBall, message: String) -> RadiusOutcome {
    RadiusOutcome { r: ball.r(), s_max: ball.s_max(), passed: false, detail: Detail::Error { message } }
}

fn outcome(ball: &LBall, passed: bool, detail: Detail) -> RadiusOutcome {
    RadiusOutcome { r: ball.r(), s_max: ball.s_max(), passed, detail }
}

pub fn perturbed(ball: &LBall, kind: PerturbationKind, m: f64) -> Result<SlicedDomain, PotentialError> {
    match kind {
        PerturbationKind::SpatialShift => SlicedDomain::shifted_by_fraction(ball.clone(), m),
        PerturbationKind::RadiusMismatch => {
            SlicedDomain::perturbed(ball.clone(), Perturbation::RadiusMismatch { r_prime: (1.0 + m) * ball.r() })
        }
        PerturbationKind::SliceScale => SlicedDomain::perturbed(ball.clone(), Perturbation::SliceScale { magnitude: m }),
        PerturbationKind::Bite => SlicedDomain::perturbed(ball.clone(), Perturbation::Bite { radius: m }),
        PerturbationKind::TimeShift => {
            SlicedDomain::perturbed(ball.clone(), Perturbation::TimeShift { dt: m * ball.s_max() })
        }
    }
}

/// `⌈Q/2⌉ + 1`.
pub fn default_p(ball: &LBall) -> f64 {
    (ball.evaluator().spec().homogeneous_dimension() as f64 / 2.0).ceil() + 1.0
}

/// Seeded exterior points, at least `want` of them with `Γ(z0, z) > 1e-12`.
pub fn nontrivial_points(domain: &SlicedDomain, want: usize, seed: u64) -> Vec<GroupPoint> {
    let reference = domain.reference();
    let ev = reference.evaluator();
    let mut count = 2 * want.max(1);
    loop {
        let pts: Vec<GroupPoint> = exterior_test_points(domain, count, seed).into_iter().map(|p| p.0).collect();
        let good = pts.iter().filter(|z| reference.r() * ev.gamma(reference.z0(), z) > 1e-12).count();
        if good >= want || count > 64 * want.max(1) {
            return pts;
        }
        count *= 2;
    }
}

pub fn run_one(exp: &Experiment, ev: &Arc<GammaEvaluator>, z0: &GroupPoint, r: f64, cfg: &QuadratureConfig) -> RadiusOutcome {
    let ball = match LBall::new(ev.clone(), z0.clone(), r) {
        Ok(b) => b,
        Err(e) => {
            return RadiusOutcome { r, s_max: f64::NAN, passed: false, detail: Detail::Error { message: e.to_string() } }
        }
    };
    match exp {
        Experiment::Mvf { max_degree, tolerance, monte_carlo, .. } => {
            mvf(&ball, *max_degree, *tolerance, *monte_carlo, cfg)
        }
        Experiment::PotentialIdentity { points, tolerance, .. } => {
            let d = SlicedDomain::exact(ball.clone());
            let pts = nontrivial_points(&d, *points, cfg.seed);
            match potential_identity_residual(&d, &pts, cfg) {
                Ok(rep) => {
                    let nontrivial = rep.points.iter().filter(|e| e.rhs > 1e-12).count();
                    let passed = nontrivial >= *points && rep.all_converged && rep.sup_rel_residual < *tolerance;
                    outcome(
                        &ball,
                        passed,
                        Detail::PotentialIdentity {
                            nontrivial_points: nontrivial,
                            sup_abs_residual: rep.sup_abs_residual,
                            sup_rel_residual: rep.sup_rel_residual,
                            all_converged: rep.all_converged,
                            points: rep.points,
                        },
                    )
                }
                Err(e) => fail(&ball, e.to_string()),
            }
        }
        Experiment::InteriorInequality { points, error_factor, .. } => {
            let pts = interior_points(&ball, *points, cfg.seed);
            match interior_inequality_margin(&ball, &pts, cfg) {
                Ok(m) => {
                    let worst = m.iter().map(|e| e.margin / e.error.max(f64::MIN_POSITIVE)).fold(f64::INFINITY, f64::min);
                    let passed = m.iter().all(|e| e.margin > 0.0 && e.margin > error_factor * e.error);
                    outcome(&ball, passed, Detail::InteriorInequality { min_margin_over_error: worst, points: m })
                }
                Err(e) => fail(&ball, e.to_string()),
            }
        }
        Experiment::Rigidity { perturbation, magnitude, points, min_ratio, p, require_lp_finite, .. } => {
            let d = match perturbed(&ball, *perturbation, *magnitude) {
                Ok(d) => d,
                Err(e) => return fail(&ball, e.to_string()),
            };
            let pts = nontrivial_points(&d, *points, cfg.seed);
            let exact = SlicedDomain::exact(ball.clone());
            let (base, pert) = match (potential_identity_residual(&exact, &pts, cfg), potential_identity_residual(&d, &pts, cfg)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return fail(&ball, e.to_string()),
            };
            let lp = lp_condition_norm(&d, p.unwrap_or_else(|| default_p(&ball)), cfg);
            let floor = base.sup_rel_residual.max(f64::MIN_POSITIVE);
            let ratio = pert.sup_rel_residual / floor;
            let passed = ratio >= *min_ratio && (!require_lp_finite || lp.finite);
            let heuristic_note = (*perturbation == PerturbationKind::SpatialShift)
                .then(|| "growth of the residual with the shift is a heuristic, not a theorem".to_string());
            outcome(
                &ball,
                passed,
                Detail::Rigidity {
                    perturbation: *perturbation,
                    magnitude: *magnitude,
                    exact_sup_rel_residual: base.sup_rel_residual,
                    sup_rel_residual: pert.sup_rel_residual,
                    ratio,
                    all_converged: pert.all_converged,
                    lp,
                    heuristic_note,
                    points: pert.points,
                },
            )
        }
        Experiment::LpCheck { perturbation, magnitude, p, method, .. } => {
            let d = match perturbed(&ball, *perturbation, *magnitude) {
                Ok(d) => d,
                Err(e) => return fail(&ball, e.to_string()),
            };
            let d = match method {
                LpMethod::Slices => d,
                LpMethod::MonteCarlo => {
                    let bbox = d.bounding_box();
                    let inner = d.clone();
                    SlicedDomain::indicator(ball.clone(), Arc::new(move |z: &GroupPoint| inner.contains(z)), bbox)
                }
            };
            let lp = lp_condition_norm(&d, p.unwrap_or_else(|| default_p(&ball)), cfg);
            outcome(&ball, lp.finite, Detail::LpCheck { perturbation: *perturbation, magnitude: *magnitude, lp })
        }
        Experiment::FutureMass { magnitude, .. } => {
            let d = match perturbed(&ball, PerturbationKind::TimeShift, *magnitude) {
                Ok(d) => d,
                Err(e) => return fail(&ball, e.to_string()),
            };
            match future_mass_check(&d, cfg) {
                Ok(report) => outcome(&ball, report.violation, Detail::FutureMass { magnitude: *magnitude, report }),
                Err(e) => fail(&ball, e.to_string()),
            }
        }
    }
}

fn mvf(ball: &LBall, max_degree: u32, tolerance: f64, monte_carlo: bool, cfg: &QuadratureConfig) -> RadiusOutcome {
    let ev = ball.evaluator();
    let basis = harmonic_basis(ev.spec(), max_degree);
    if !basis.certified {
        return fail(ball, "harmonic basis could not be certified".into());
    }
    let z0 = ball.z0();
    let mut entries = Vec::with_capacity(basis.polynomials.len());
    for u in &basis.polynomials {
        let target = u.eval(z0);
        let est = match mean_value(ev, MeanValueInput::Polynomial(u), z0, ball.r(), cfg) {
            Ok(e) => e,
            Err(e) => return fail(ball, e.to_string()),
        };
        let bound = tolerance * (1.0 + target.abs());
        let deviation = (est.value - target).abs();
        let mut passed = deviation < bound;
        let mc = if monte_carlo {
            let f = |z: &GroupPoint| u.eval(z);
            match mean_value(ev, MeanValueInput::Callable(&f), z0, ball.r(), cfg) {
                Ok(m) => {
                    // a five-sigma band around the exact value
                    passed &= (m.value - target).abs() <= 5.0 * m.error + bound;
                    Some((m.value, m.error))
                }
                Err(e) => return fail(ball, e.to_string()),
            }
        } else {
            None
        };
        entries.push(MvfEntry {
            polynomial: u.to_text(),
            u_at_z0: target,
            mean_value: est.value,
            error: est.error,
            deviation,
            bound,
            monte_carlo: mc,
            passed,
        });
    }
    let passed = entries.iter().all(|e| e.passed);
    outcome(ball, passed, Detail::Mvf { entries })
}
