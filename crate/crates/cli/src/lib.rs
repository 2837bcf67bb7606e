//! Batch driver: reads an experiment config, runs the verification
//! experiments and writes JSON/CSV reports.

pub mod config;
pub mod experiments;
pub mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use kolmoball_core::{GammaEvaluator, LBall};
use thiserror::Error;

use config::{ExperimentConfig, Format};
use report::{ExperimentReport, OperatorInfo, Summary, SummaryEntry};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("experiment failure: {0}")]
    ExperimentFailure(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ExperimentFailure(_) => 1,
            CliError::ConfigParse(_) | CliError::Schema(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

/// Reads and validates a config; `seed` replaces `quadrature.seed` before validation.
pub fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    ExperimentConfig::parse_with_seed(&text, seed)
}

/// Geometry only: blocks, `Q`, `s_max` and bounding box per radius.
pub fn describe(cfg: &ExperimentConfig) -> String {
    let spec = &cfg.operator;
    let mut out = String::new();
    let _ = writeln!(out, "operator: {}", spec.label());
    let _ = writeln!(out, "block sizes: {:?}", spec.block_sizes());
    let _ = writeln!(out, "Q={}", spec.homogeneous_dimension());
    let _ = writeln!(out, "operator hash: {}", report::operator_hash(spec));
    let z0 = cfg.z0();
    let _ = writeln!(out, "z0: x={:?} t={}", z0.x.as_slice(), z0.t);
    let ev = Arc::new(GammaEvaluator::new(spec.clone()));
    for r in cfg.radii() {
        match LBall::new(ev.clone(), z0.clone(), r) {
            Ok(ball) => {
                let _ = writeln!(out, "r={r}: s_max={}", fmt_num(ball.s_max()));
                let bb = ball.bounding_box();
                let list = |v: &nalgebra::DVector<f64>| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", ");
                let _ = writeln!(out, "  bounding box lo=[{}]", list(&bb.lo));
                let _ = writeln!(out, "  bounding box hi=[{}]", list(&bb.hi));
            }
            Err(e) => {
                let _ = writeln!(out, "r={r}: {e}");
            }
        }
    }
    let _ = writeln!(out, "slices per radius: {}", cfg.output.slices);
    let _ = writeln!(out, "experiments: {}", cfg.experiments.iter().map(|e| e.name()).collect::<Vec<_>>().join(", "));
    out
}

/// Rounds away the last few bits so that `1.0000000000000002` prints as `1`.
fn fmt_num(v: f64) -> String {
    let s = format!("{v:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn kind_name(e: &config::Experiment) -> String {
    let v = serde_json::to_value(e).expect("experiments serialize");
    v["kind"].as_str().unwrap_or_default().to_string()
}

/// Runs every experiment for every radius. Reports are returned in config order.
pub fn run_experiments(cfg: &ExperimentConfig) -> (Summary, Vec<ExperimentReport>) {
    let spec = &cfg.operator;
    let ev = Arc::new(GammaEvaluator::new(spec.clone()));
    let qc = cfg.quadrature_config();
    let z0 = cfg.z0();
    let info = OperatorInfo::new(spec);
    let mut reports = Vec::new();
    let mut entries = Vec::new();
    for exp in &cfg.experiments {
        let runs: Vec<_> = cfg.radii().iter().map(|&r| experiments::run_one(exp, &ev, &z0, r, &qc)).collect();
        let passed = runs.iter().all(|r| r.passed);
        let kind = kind_name(exp);
        entries.push(SummaryEntry {
            experiment: exp.name().to_string(),
            kind: kind.clone(),
            passed,
            failed_radii: runs.iter().filter(|r| !r.passed).map(|r| r.r).collect(),
        });
        reports.push(ExperimentReport {
            tool: report::TOOL,
            version: report::VERSION,
            experiment: exp.name().to_string(),
            kind,
            operator: info.clone(),
            seed: cfg.quadrature.seed,
            tolerances: cfg.quadrature.clone(),
            z0: (z0.x.iter().copied().collect(), z0.t),
            passed,
            runs,
        });
    }
    let summary = Summary {
        tool: report::TOOL,
        version: report::VERSION,
        operator: info,
        seed: cfg.quadrature.seed,
        tolerances: cfg.quadrature.clone(),
        passed: entries.iter().all(|e| e.passed),
        experiments: entries,
    };
    (summary, reports)
}

/// Runs the config and writes `<name>.json` / `<name>.csv` per experiment,
/// `slices_r<k>.csv` per radius and `summary.json` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, format: Format) -> Result<Summary, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let (summary, reports) = run_experiments(cfg);
    let json = matches!(format, Format::Json | Format::Both);
    let csv = matches!(format, Format::Csv | Format::Both);
    for rep in &reports {
        if json {
            report::write_atomic(&out.join(format!("{}.json", rep.experiment)), &report::to_json(rep))?;
        }
        if csv {
            if let Some(table) = report::csv_table(rep) {
                report::write_atomic(&out.join(format!("{}.csv", rep.experiment)), &table)?;
            }
        }
    }
    if csv {
        let ev = Arc::new(GammaEvaluator::new(cfg.operator.clone()));
        for (k, r) in cfg.radii().iter().enumerate() {
            if let Ok(ball) = LBall::new(ev.clone(), cfg.z0(), *r) {
                report::write_atomic(&out.join(format!("slices_r{k}.csv")), &ball.slices_csv(cfg.output.slices))?;
            }
        }
    }
    report::write_atomic(&out.join("summary.json"), &report::to_json(&summary))?;
    Ok(summary)
}
