//! Experiment configuration files.
//!
//! A config is TOML with the sections `operator`, `ball`, `quadrature`,
//! `experiments` and `output`. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::PathBuf;

use kolmoball_core::{validate_operator, OperatorSpec, QuadratureConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    operator: BTreeMap<String, toml::Value>,
    ball: BallSection,
    #[serde(default)]
    quadrature: QuadratureSection,
    experiments: Vec<Experiment>,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BallSection {
    /// Spatial part of `z0`; the origin when omitted.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub r: Option<f64>,
    /// Several radii, run one after another.
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub slice_rel_tol: f64,
    pub max_evals: usize,
    pub endpoint_refinement: usize,
    pub mc_samples: usize,
    pub seed: Option<u64>,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        let q = QuadratureConfig::default();
        Self {
            rel_tol: 1e-7,
            abs_tol: q.abs_tol,
            slice_rel_tol: 1e-8,
            max_evals: q.max_evals,
            endpoint_refinement: q.endpoint_refinement,
            mc_samples: q.mc_samples,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Magnitude is a fraction of the ball's half-width along `x_1`.
    SpatialShift,
    /// Magnitude `m` gives `r' = (1 + m) r`.
    RadiusMismatch,
    SliceScale,
    /// Magnitude is the relative size of the removed ellipsoid.
    Bite,
    /// Magnitude is a fraction of `s_max`, upward in time.
    TimeShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpMethod {
    Slices,
    MonteCarlo,
}

fn default_degree() -> u32 {
    4
}
fn default_mvf_tol() -> f64 {
    1e-7
}
fn default_identity_points() -> usize {
    32
}
fn default_identity_tol() -> f64 {
    1e-5
}
fn default_interior_points() -> usize {
    16
}
fn default_factor() -> f64 {
    5.0
}
fn default_ratio() -> f64 {
    100.0
}
fn default_lp_method() -> LpMethod {
    LpMethod::Slices
}
fn default_future_magnitude() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Mean-value formula for the certified harmonic basis.
    Mvf {
        name: String,
        #[serde(default = "default_degree")]
        max_degree: u32,
        #[serde(default = "default_mvf_tol")]
        tolerance: f64,
        /// Also evaluate through the Monte Carlo path.
        #[serde(default)]
        monte_carlo: bool,
    },
    PotentialIdentity {
        name: String,
        /// Points with `Γ(z0, z) > 0`; more are drawn to reach this count.
        #[serde(default = "default_identity_points")]
        points: usize,
        #[serde(default = "default_identity_tol")]
        tolerance: f64,
    },
    InteriorInequality {
        name: String,
        #[serde(default = "default_interior_points")]
        points: usize,
        /// Margins must exceed this many error estimates.
        #[serde(default = "default_factor")]
        error_factor: f64,
    },
    /// Passes when the perturbed domain breaks the identity.
    Rigidity {
        name: String,
        perturbation: PerturbationKind,
        magnitude: f64,
        #[serde(default = "default_identity_points")]
        points: usize,
        /// Required ratio to the exact-ball residual.
        #[serde(default = "default_ratio")]
        min_ratio: f64,
        /// Exponent of the integrability check; `⌈Q/2⌉ + 1` when omitted.
        #[serde(default)]
        p: Option<f64>,
        /// Also require the integrability check to be finite.
        #[serde(default)]
        require_lp_finite: bool,
    },
    LpCheck {
        name: String,
        perturbation: PerturbationKind,
        magnitude: f64,
        #[serde(default)]
        p: Option<f64>,
        #[serde(default = "default_lp_method")]
        method: LpMethod,
    },
    /// Passes when a ball moved up by `magnitude · s_max` is detected.
    FutureMass {
        name: String,
        #[serde(default = "default_future_magnitude")]
        magnitude: f64,
    },
}

impl Experiment {
    pub fn name(&self) -> &str {
        match self {
            Experiment::Mvf { name, .. }
            | Experiment::PotentialIdentity { name, .. }
            | Experiment::InteriorInequality { name, .. }
            | Experiment::Rigidity { name, .. }
            | Experiment::LpCheck { name, .. }
            | Experiment::FutureMass { name, .. } => name,
        }
    }

    pub fn uses_monte_carlo(&self) -> bool {
        matches!(
            self,
            Experiment::Mvf { monte_carlo: true, .. } | Experiment::LpCheck { method: LpMethod::MonteCarlo, .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Both,
}

fn default_dir() -> PathBuf {
    PathBuf::from("reports")
}
fn default_format() -> Format {
    Format::Json
}
fn default_slices() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_format")]
    pub format: Format,
    /// Rows of the per-radius slice table.
    #[serde(default = "default_slices")]
    pub slices: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir(), format: default_format(), slices: default_slices() }
    }
}

/// A parsed and validated configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub operator: OperatorSpec,
    pub ball: BallSection,
    pub quadrature: QuadratureSection,
    pub experiments: Vec<Experiment>,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::parse_with_seed(text, None)
    }

    pub fn parse_with_seed(text: &str, seed: Option<u64>) -> Result<Self, CliError> {
        let mut raw: RawConfig = toml::from_str(text).map_err(|e| CliError::ConfigParse(e.to_string()))?;
        if seed.is_some() {
            raw.quadrature.seed = seed;
        }
        let operator = parse_operator(&raw.operator)?;
        let cfg = Self {
            operator,
            ball: raw.ball,
            quadrature: raw.quadrature,
            experiments: raw.experiments,
            output: raw.output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn radii(&self) -> Vec<f64> {
        match (&self.ball.r, &self.ball.radii) {
            (Some(r), None) => vec![*r],
            (None, Some(rs)) => rs.clone(),
            _ => Vec::new(),
        }
    }

    pub fn z0(&self) -> kolmoball_core::GroupPoint {
        let x = self.ball.x0.clone().unwrap_or_else(|| vec![0.0; self.operator.n()]);
        kolmoball_core::GroupPoint::from_slice(&x, self.ball.t0)
    }

    pub fn quadrature_config(&self) -> QuadratureConfig {
        let q = &self.quadrature;
        QuadratureConfig {
            rel_tol: q.rel_tol,
            abs_tol: q.abs_tol,
            max_evals: q.max_evals,
            endpoint_refinement: q.endpoint_refinement,
            slice_rel_tol: q.slice_rel_tol,
            mc_samples: q.mc_samples,
            seed: q.seed.unwrap_or(0),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let schema = |m: String| Err(CliError::Schema(m));
        match (&self.ball.r, &self.ball.radii) {
            (Some(_), Some(_)) => return schema("ball: give either `r` or `radii`, not both".into()),
            (None, None) => return schema("ball: one of `r` or `radii` is required".into()),
            (None, Some(rs)) if rs.is_empty() => return schema("ball: `radii` is empty".into()),
            _ => {}
        }
        if self.radii().iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return schema("ball: radii must be positive and finite".into());
        }
        if let Some(x) = &self.ball.x0 {
            if x.len() != self.operator.n() {
                return schema(format!("ball: x0 has {} entries, the operator acts on R^{}", x.len(), self.operator.n()));
            }
        }
        self.quadrature_config().validate().map_err(|m| CliError::Schema(format!("quadrature: {m}")))?;
        if self.experiments.is_empty() {
            return schema("experiments: at least one experiment is required".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for e in &self.experiments {
            let name = e.name();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return schema(format!("experiment name {name:?} must be non-empty and use [A-Za-z0-9_-]"));
            }
            if !names.insert(name) {
                return schema(format!("duplicate experiment name {name:?}"));
            }
            if e.uses_monte_carlo() && self.quadrature.seed.is_none() {
                return schema(format!("experiment {name:?} uses Monte Carlo: quadrature.seed is required"));
            }
        }
        Ok(())
    }
}

fn matrix(key: &str, v: &toml::Value) -> Result<DMatrix<f64>, CliError> {
    let err = || CliError::Schema(format!("operator.{key} must be a non-empty array of equal-length numeric rows"));
    let rows = v.as_array().ok_or_else(err)?;
    let mut data = Vec::new();
    let mut width = None;
    for row in rows {
        let row = row.as_array().ok_or_else(err)?;
        if *width.get_or_insert(row.len()) != row.len() || row.is_empty() {
            return Err(err());
        }
        for x in row {
            data.push(x.as_float().or_else(|| x.as_integer().map(|i| i as f64)).ok_or_else(err)?);
        }
    }
    let w = width.ok_or_else(err)?;
    Ok(DMatrix::from_row_slice(rows.len(), w, &data))
}

/// Operator section: `block_sizes`, `A0` and `B1`..`Br` as row-major arrays.
fn parse_operator(t: &BTreeMap<String, toml::Value>) -> Result<OperatorSpec, CliError> {
    for key in t.keys() {
        let drift = key.strip_prefix('B').is_some_and(|k| !k.is_empty() && k.chars().all(|c| c.is_ascii_digit()));
        if key != "block_sizes" && key != "A0" && !drift {
            return Err(CliError::Schema(format!("operator: unknown key `{key}`")));
        }
    }
    let blocks = t
        .get("block_sizes")
        .and_then(|v| v.as_array())
        .ok_or_else(|| CliError::Schema("operator.block_sizes is required".into()))?
        .iter()
        .map(|v| v.as_integer().filter(|&i| i > 0).map(|i| i as usize))
        .collect::<Option<Vec<usize>>>()
        .ok_or_else(|| CliError::Schema("operator.block_sizes must be positive integers".into()))?;
    let a0 = matrix("A0", t.get("A0").ok_or_else(|| CliError::Schema("operator.A0 is required".into()))?)?;
    let r = blocks.len().saturating_sub(1);
    let mut b = Vec::with_capacity(r);
    for j in 1..=r {
        let key = format!("B{j}");
        let v = t.get(&key).ok_or_else(|| CliError::Schema(format!("operator.{key} is required")))?;
        b.push(matrix(&key, v)?);
    }
    if t.keys().filter(|k| k.starts_with('B') && k.as_str() != "block_sizes").count() != r {
        return Err(CliError::Schema(format!("operator: expected drift blocks B1..B{r} only")));
    }
    let n = blocks.iter().sum();
    validate_operator(n, &blocks, a0, b).map_err(|e| CliError::Schema(format!("operator: {e}")))
}
