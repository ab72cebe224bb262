// SPDX-License-Identifier: Apache-2.0

//! `pufsim`: batch driver for the PUF simulator.
//!
//! Exit codes: 0 success, 1 runtime or convergence failure, 2 configuration
//! error.

mod commands;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use pufsim::config::ExperimentConfig;
use pufsim::pipeline::Method;

use output::{sha256_hex, Format, Output};

#[derive(Parser)]
#[command(name = "pufsim", version, about = "Monte-Carlo simulator of a regulated subthreshold-inverter PUF")]
struct Cli {
    /// Experiment configuration (TOML). The built-in reference experiment
    /// is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Chip seed; repeat to list several. Replaces the configured seeds.
    #[arg(long = "seed", global = true)]
    seeds: Vec<u64>,
    /// Output directory. Replaces the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Format of series outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Evb,
    TempOracle,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Evb => Method::Evb,
            MethodArg::TempOracle => Method::TempOracle,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample one chip per seed.
    Generate,
    /// Build the R-MAP and mask of every chip.
    Enroll {
        #[arg(long, value_enum, default_value_t = MethodArg::Evb)]
        method: MethodArg,
    },
    /// Nominal BER of raw, TMV and stabilized reads.
    Evaluate {
        #[arg(long, value_enum, default_value_t = MethodArg::Evb)]
        method: MethodArg,
    },
    /// Temperature, supply and body-bias sweeps (needs both enrollments).
    Sweep,
    /// Generate, enroll and evaluate in one pass.
    Stabilize {
        #[arg(long, value_enum, default_value_t = MethodArg::Evb)]
        method: MethodArg,
    },
    /// Uniqueness, autocorrelation, entropy and randomness tests.
    Report {
        #[arg(long, value_enum, default_value_t = MethodArg::Evb)]
        method: MethodArg,
    },
    /// Run the built-in oracle checks.
    Selftest,
    /// Print the effective configuration as TOML.
    Config,
}

enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(cli: &Cli) -> std::result::Result<(ExperimentConfig, Vec<String>), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => ExperimentConfig::reference(),
    };
    let mut overrides = Vec::new();
    if !cli.seeds.is_empty() {
        cfg.seeds = cli.seeds.clone();
        overrides.push(format!("seeds = {:?}", cfg.seeds));
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
        overrides.push(format!("output_dir = {:?}", out.display().to_string()));
    }
    if cfg.seeds.is_empty() {
        return Err(Failure::Config("no chip seeds configured".into()));
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok((cfg, overrides))
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let (cfg, overrides) = load_config(&cli)?;
    let (label, method) = match &cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        Command::Selftest => {
            return if selftest::run() {
                Ok(())
            } else {
                Err(Failure::Runtime(anyhow::anyhow!("selftest failed")))
            };
        }
        Command::Generate => ("generate".to_string(), None),
        Command::Sweep => ("sweep".to_string(), None),
        Command::Enroll { method } => (format!("enroll/{}", Method::from(*method)), Some(Method::from(*method))),
        Command::Evaluate { method } => (format!("evaluate/{}", Method::from(*method)), Some(Method::from(*method))),
        Command::Stabilize { method } => (format!("stabilize/{}", Method::from(*method)), Some(Method::from(*method))),
        Command::Report { method } => (format!("report/{}", Method::from(*method)), Some(Method::from(*method))),
    };
    let hash = sha256_hex(cfg.to_toml().as_bytes());
    let mut out = Output::new(&cfg.output_dir, &label, cli.format, hash, cfg.seeds.clone(), overrides);
    let method = method.unwrap_or(Method::Evb);
    let result: Result<()> = match cli.command {
        Command::Generate => commands::generate(&cfg, &mut out),
        Command::Enroll { .. } => commands::enroll(&cfg, method, &mut out),
        Command::Evaluate { .. } => commands::evaluate(&cfg, method, &mut out),
        Command::Sweep => commands::sweep(&cfg, &mut out),
        Command::Stabilize { .. } => commands::stabilize(&cfg, method, &mut out),
        Command::Report { .. } => commands::report(&cfg, method, &mut out),
        Command::Config | Command::Selftest => unreachable!(),
    };
    if let Err(e) = &result {
        out.error(format!("{e:#}"));
    }
    let manifest = out.finish()?;
    for e in &manifest.errors {
        eprintln!("error: {e}");
    }
    if manifest.complete {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!(
            "{} error(s); partial outputs listed in the manifest",
            manifest.errors.len()
        )))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
