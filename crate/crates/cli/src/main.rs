use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kolmoball_cli::config::Format;
use kolmoball_cli::{describe, load, report, run, CliError};

#[derive(Parser)]
#[command(name = "kolmoball", version, about = "Mean-value and potential experiments for Kolmogorov-type operators")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a config and write reports.
    Run {
        config: PathBuf,
        /// Overrides `quadrature.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `output.format`.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Print the geometry a config describes without running anything.
    Describe { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("kolmoball: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kolmoball: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Describe { config } => {
            print!("{}", describe(&load(&config, None)?));
            Ok(())
        }
        Command::Run { config, seed, out, format } => {
            let cfg = load(&config, seed)?;
            let out = out.unwrap_or_else(|| cfg.output.dir.clone());
            let format = format.unwrap_or(cfg.output.format);
            let summary = run(&cfg, &out, format)?;
            print!("{}", report::to_json(&summary));
            if summary.passed {
                Ok(())
            } else {
                let failed: Vec<&str> =
                    summary.experiments.iter().filter(|e| !e.passed).map(|e| e.experiment.as_str()).collect();
                Err(CliError::ExperimentFailure(failed.join(", ")))
            }
        }
    }
}
