//! Potential theory for Kolmogorov-type operators
//! `L = div(A∇) + <Bx, ∇> - ∂_t` with block-structured constant `A`, `B`.
//!
//! The crate builds the homogeneous group attached to `L`, its Gaussian
//! fundamental solution `Γ`, the level-set balls `Ω_r(z0)` and the
//! mean-value kernel `W`, and integrates over balls and perturbed balls
//! accurately enough to test the mean-value formula and the potential
//! identities numerically.

pub mod ball;
pub mod covariance;
pub mod fundamental;
pub mod harmonic;
pub mod operator;
pub mod potential;
pub mod quadrature;

pub use ball::{ball_time_extent, BallError, BoundingBox, Ellipsoid, LBall, Membership};
pub use covariance::{CovarianceError, CovarianceModel, MatrixPolynomial, ScalarPolynomial};
pub use fundamental::{GammaEvaluator, KernelError};
pub use harmonic::{apply_l, harmonic_basis, AnisoPolynomial, HarmonicBasis};
pub use operator::{validate_operator, GroupPoint, OperatorError, OperatorSpec};
pub use quadrature::{integrate_over_ball, BallIntegrand, Estimate, QuadratureConfig};
pub use potential::{
    exterior_test_points, future_mass_check, gamma_potential, interior_inequality_margin, interior_points,
    lp_condition_norm, mean_value, potential_identity_residual, FutureMassReport, LpReport, MarginEntry,
    MeanValueInput, Perturbation, PointCategory, PotentialError, ResidualEntry, RigidityReport, SlicedDomain,
};
