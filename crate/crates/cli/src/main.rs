use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use birkhoff_cli::commands::{run_check, run_oracle_check, run_scan, run_sweep, run_weight_norms};
use birkhoff_cli::config::{ExperimentConfig, DEFAULT_DIGITS, PRECISION_ENV};
use birkhoff_cli::CliError;
use birkhoff_core::Precision;
use clap::{Parser, Subcommand};

/// Weighted Birkhoff averages of torus rotations in extended precision.
#[derive(Parser)]
#[command(name = "birkhoff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an N (or T) grid and write the sweep CSV.
    Sweep {
        config: PathBuf,
        /// Write here instead of the config's `output` (or stdout).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Evaluate the config's hypothesis block and print a JSON verdict.
    Check { config: PathBuf },
    /// Nonresonance constant of a rotation, as JSON.
    Scan {
        rotation: String,
        approx: String,
        #[arg(long = "K", short = 'K')]
        k: u64,
        /// Use |k·ρ| instead of the distance to the integers.
        #[arg(long)]
        continuous: bool,
        #[arg(long)]
        precision: Option<u32>,
    },
    /// L¹ norms of the derivatives of the exponential bump, as CSV.
    WeightNorms {
        #[arg(long)]
        n_max: u32,
        #[arg(long, default_value_t = 40)]
        digits: u32,
    },
    /// Compare orbit averages with the Fourier oracle over the config's grid.
    OracleCheck { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::parse(&text)
}

fn default_precision() -> Result<Precision, CliError> {
    match std::env::var(PRECISION_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Precision::new)
            .map_err(|_| CliError::Parse(format!("{PRECISION_ENV}: cannot parse `{v}`"))),
        Err(_) => Ok(Precision::new(DEFAULT_DIGITS)),
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sweep { config, out } => {
            let cfg = load(&config)?;
            let target = out.or_else(|| cfg.output.clone());
            let outcome = run_sweep(&cfg, sink(target.as_deref())?)?;
            if let Some(fit) = outcome.fit {
                eprintln!("fit: {:?} over {} points", fit.model, fit.used.len());
            }
            Ok(())
        }
        Command::Check { config } => {
            let cfg = load(&config)?;
            let doc = run_check(&cfg)?;
            eprintln!("{}: {}", doc["hypothesis"].as_str().unwrap_or("?"), doc["verdict"].as_str().unwrap_or("?"));
            let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Numeric(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
        Command::Scan {
            rotation,
            approx,
            k,
            continuous,
            precision,
        } => {
            let p = match precision {
                Some(d) => Precision::new(d),
                None => default_precision()?,
            };
            let doc = run_scan(&rotation, &approx, k, continuous, p)?;
            let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Numeric(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
        Command::WeightNorms { n_max, digits } => run_weight_norms(n_max, digits, io::stdout().lock()),
        Command::OracleCheck { config } => {
            let cfg = load(&config)?;
            run_oracle_check(&cfg, io::stdout().lock())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("birkhoff: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
