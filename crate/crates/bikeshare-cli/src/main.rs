//! `bikeshare`: analyses of the finite-capacity bike-sharing fleet model.
//!
//! Every experiment subcommand reads a JSON configuration, runs the analysis,
//! and writes deterministic CSV artifacts plus a checksummed run manifest.

mod artifacts;
mod config;
mod experiments;
mod svg;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, ExperimentKind, Overrides};

#[derive(Parser)]
#[command(
    name = "bikeshare",
    about = "Finite-capacity bike-sharing fleet model: simulation, limit ODEs, and trip-data analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replication-count override.
    #[arg(long)]
    replications: Option<usize>,
    /// Horizon override.
    #[arg(long)]
    horizon: Option<f64>,
    /// Also emit SVG line charts.
    #[arg(long)]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated stochastic simulation of the occupancy chain.
    Simulate(RunArgs),
    /// Mean-field ODE solution.
    Meanfield(RunArgs),
    /// Fluctuation mean/covariance ODEs along the mean field.
    Diffusion(RunArgs),
    /// Simulation against both limits, with bands.
    Compare(RunArgs),
    /// Mean-field equilibrium and its shape.
    Equilibrium(RunArgs),
    /// Equilibrium docked-bikes sweep over arrival rates.
    Sweep(RunArgs),
    /// Demand-response lags of the mean field under sinusoidal demand.
    Lag(RunArgs),
    /// Trip-log ingestion: binned rates, duration statistics, demand fit.
    Ingest(RunArgs),
    /// Check artifact checksums against a run manifest.
    Verify {
        /// Path to a run_manifest.json.
        manifest: PathBuf,
    },
}

fn run_experiment(kind: ExperimentKind, args: &RunArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(declared) = config.kind {
        if declared != kind {
            bail!(
                "kind: config declares {:?} but the {} subcommand was invoked",
                declared.name(),
                kind.name()
            );
        }
    }
    config.apply(&Overrides {
        master_seed: args.seed,
        out_dir: args.out.clone(),
        replications: args.replications,
        horizon: args.horizon,
        svg: args.svg,
    });
    let manifest = experiments::run(kind, &config)?;
    println!(
        "{}: wrote {} artifacts to {}",
        kind.name(),
        manifest.artifacts.len(),
        config.out_dir.display()
    );
    for entry in &manifest.artifacts {
        println!("  {} ({} bytes)", entry.file, entry.bytes);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(args) => run_experiment(ExperimentKind::Simulate, args),
        Command::Meanfield(args) => run_experiment(ExperimentKind::Meanfield, args),
        Command::Diffusion(args) => run_experiment(ExperimentKind::Diffusion, args),
        Command::Compare(args) => run_experiment(ExperimentKind::Compare, args),
        Command::Equilibrium(args) => run_experiment(ExperimentKind::Equilibrium, args),
        Command::Sweep(args) => run_experiment(ExperimentKind::Sweep, args),
        Command::Lag(args) => run_experiment(ExperimentKind::Lag, args),
        Command::Ingest(args) => run_experiment(ExperimentKind::Ingest, args),
        Command::Verify { manifest } => {
            let checked = artifacts::verify_manifest(manifest)?;
            println!(
                "manifest ok: {} artifacts verified for kind {}",
                checked.artifacts.len(),
                checked.kind
            );
            Ok(())
        }
    }
}
