//! Report types and their JSON/CSV serialization.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kolmoball_core::{FutureMassReport, LpReport, MarginEntry, OperatorSpec, ResidualEntry};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{PerturbationKind, QuadratureSection};
use crate::CliError;

pub const TOOL: &str = "kolmoball";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 over the block sizes and the exact bit patterns of `A0`, `B_j`.
pub fn operator_hash(spec: &OperatorSpec) -> String {
    let mut h = Sha256::new();
    let mut text = String::from("blocks");
    for p in spec.block_sizes() {
        let _ = write!(text, ":{p}");
    }
    let mut push = |name: &str, m: &nalgebra::DMatrix<f64>| {
        let _ = write!(text, "|{name}:{}x{}", m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let _ = write!(text, ":{:016x}", m[(i, j)].to_bits());
            }
        }
    };
    push("A0", spec.a0());
    for (j, b) in spec.b_blocks().iter().enumerate() {
        push(&format!("B{}", j + 1), b);
    }
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorInfo {
    pub label: String,
    pub block_sizes: Vec<usize>,
    pub homogeneous_dimension: usize,
    pub hash: String,
}

impl OperatorInfo {
    pub fn new(spec: &OperatorSpec) -> Self {
        Self {
            label: spec.label(),
            block_sizes: spec.block_sizes().to_vec(),
            homogeneous_dimension: spec.homogeneous_dimension(),
            hash: operator_hash(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MvfEntry {
    pub polynomial: String,
    pub u_at_z0: f64,
    pub mean_value: f64,
    pub error: f64,
    pub deviation: f64,
    pub bound: f64,
    /// Monte Carlo estimate with its standard error, when requested.
    pub monte_carlo: Option<(f64, f64)>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Detail {
    Mvf {
        entries: Vec<MvfEntry>,
    },
    PotentialIdentity {
        nontrivial_points: usize,
        sup_abs_residual: f64,
        sup_rel_residual: f64,
        all_converged: bool,
        points: Vec<ResidualEntry>,
    },
    InteriorInequality {
        min_margin_over_error: f64,
        points: Vec<MarginEntry>,
    },
    Rigidity {
        perturbation: PerturbationKind,
        magnitude: f64,
        exact_sup_rel_residual: f64,
        sup_rel_residual: f64,
        /// `sup_rel_residual / exact_sup_rel_residual`.
        ratio: f64,
        all_converged: bool,
        lp: LpReport,
        /// Residual against shift size is a sanity check only.
        heuristic_note: Option<String>,
        points: Vec<ResidualEntry>,
    },
    LpCheck {
        perturbation: PerturbationKind,
        magnitude: f64,
        lp: LpReport,
    },
    FutureMass {
        magnitude: f64,
        report: FutureMassReport,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusOutcome {
    pub r: f64,
    pub s_max: f64,
    pub passed: bool,
    pub detail: Detail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub kind: String,
    pub operator: OperatorInfo,
    pub seed: Option<u64>,
    pub tolerances: QuadratureSection,
    pub z0: (Vec<f64>, f64),
    pub passed: bool,
    pub runs: Vec<RadiusOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub experiment: String,
    pub kind: String,
    pub passed: bool,
    /// Radii whose run failed.
    pub failed_radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub tool: &'static str,
    pub version: &'static str,
    pub operator: OperatorInfo,
    pub seed: Option<u64>,
    pub tolerances: QuadratureSection,
    pub passed: bool,
    pub experiments: Vec<SummaryEntry>,
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn residual_rows(out: &mut String, r: f64, points: &[ResidualEntry]) {
    for e in points {
        let x: Vec<String> = e.x.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(
            out,
            "{r:e},{},\"{}\",{:e},{:e},{:e},{:e},{:e},{:e},{}",
            e.index,
            x.join(" "),
            e.t,
            e.lhs,
            e.rhs,
            e.abs_residual,
            e.rel_residual,
            e.lhs_error,
            e.converged
        );
    }
}

/// Per-point table of an experiment, if it has one.
pub fn csv_table(report: &ExperimentReport) -> Option<String> {
    let mut out = String::new();
    for run in &report.runs {
        match &run.detail {
            Detail::PotentialIdentity { points, .. } | Detail::Rigidity { points, .. } => {
                if out.is_empty() {
                    out.push_str("r,index,x,t,lhs,rhs,abs_residual,rel_residual,lhs_error,converged\n");
                }
                residual_rows(&mut out, run.r, points);
            }
            Detail::InteriorInequality { points, .. } => {
                if out.is_empty() {
                    out.push_str("r,index,x,t,gamma,potential,margin,error\n");
                }
                for e in points {
                    let x: Vec<String> = e.x.iter().map(|v| format!("{v:e}")).collect();
                    let _ = writeln!(
                        out,
                        "{:e},{},\"{}\",{:e},{:e},{:e},{:e},{:e}",
                        run.r,
                        e.index,
                        x.join(" "),
                        e.t,
                        e.gamma,
                        e.potential,
                        e.margin,
                        e.error
                    );
                }
            }
            Detail::Mvf { entries } => {
                if out.is_empty() {
                    out.push_str("r,polynomial,u_at_z0,mean_value,error,deviation,bound,passed\n");
                }
                for e in entries {
                    let _ = writeln!(
                        out,
                        "{:e},\"{}\",{:e},{:e},{:e},{:e},{:e},{}",
                        run.r, e.polynomial, e.u_at_z0, e.mean_value, e.error, e.deviation, e.bound, e.passed
                    );
                }
            }
            _ => {}
        }
    }
    (!out.is_empty()).then_some(out)
}

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let tmp: PathBuf = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or_default()
    ));
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}
