//! `vss`: transform scans, crossing diagnostics, pricing, Monte Carlo
//! benchmarks and determinant identity checks driven by a TOML run file.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 rows
//! with numerical domain failures, 4 rows above an acceptance threshold.

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use commands::{CommandError, Summary};
use config::{ConfigError, Format, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "vss", version, about = "Volterra Stein-Stein transform and pricing driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transform values along Im(u) or Im(w) for one method.
    TransformScan(Common),
    /// Spectrum, determinant crossings and first-crossing bounds.
    CrossingScan(Common),
    /// Put and call prices with per-phase timings.
    Price(Common),
    /// Monte Carlo prices with 95% intervals.
    McBenchmark(Common),
    /// Checks exp(-2 phi) = det(Phi) at random and scan points.
    DetIdentityCheck(Common),
    /// Prints the effective configuration as TOML.
    ShowConfig(Common),
}

#[derive(Args)]
struct Common {
    /// Run file.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set model.nu=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output file; replaces `output.path`
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Replaces `output.format`
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Seed for the Monte Carlo and identity-check draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "VSS_WORKERS")]
    workers: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl Common {
    fn load(&self) -> Result<RunConfig, ConfigError> {
        let mut c = config::load(&self.config, &self.overrides)?;
        if let Some(p) = &self.output {
            c.output.path = p.clone();
        }
        if let Some(f) = self.format {
            c.output.format = match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            };
        }
        if let Some(s) = self.seed {
            if let Some(mc) = &mut c.mc {
                mc.seed = s;
            }
            if let Some(id) = &mut c.identity {
                id.seed = s;
            }
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<Summary, CommandError> {
    let (common, f): (&Common, fn(&RunConfig) -> Result<Summary, CommandError>) = match &cli.command {
        Command::TransformScan(c) => (c, commands::transform_scan),
        Command::CrossingScan(c) => (c, commands::crossing_scan),
        Command::Price(c) => (c, commands::price),
        Command::McBenchmark(c) => (c, commands::mc_benchmark),
        Command::DetIdentityCheck(c) => (c, commands::det_identity_check),
        Command::ShowConfig(c) => {
            print!("{}", config::to_toml(&c.load()?));
            return Ok(Summary::default());
        }
    };
    let config = common.load()?;
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(ConfigError("worker count must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| ConfigError(format!("cannot start {w} workers: {e}")))?;
    }
    let summary = f(&config)?;
    eprintln!("wrote {} row(s) to {}: {}", summary.rows, config.output.path.display(), summary.note);
    Ok(summary)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(s) if s.domain_errors > 0 => {
            eprintln!("error: {} row(s) failed with numerical domain errors", s.domain_errors);
            ExitCode::from(3)
        }
        Ok(s) if s.threshold_failures > 0 => {
            eprintln!("error: {} row(s) exceed the acceptance threshold", s.threshold_failures);
            ExitCode::from(4)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(CommandError::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(CommandError::Io(e)) => {
            eprintln!("I/O error: {e}");
            ExitCode::from(1)
        }
    }
}
