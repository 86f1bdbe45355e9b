//! Command-line workflow around the adcfit library: phantom generation,
//! forward transport runs, synthetic observations, single inversions,
//! regularization sweeps, MPRAGE concentration conversion, DTI reductions and
//! voxel preprocessing.
//!
//! Every subcommand takes a JSON configuration (`--config`) and an output
//! directory (`--out`), writes its results there together with a
//! `manifest.json` recording the config hash, seed and version. Exit codes:
//! 0 success, 2 configuration error, 3 numerical failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
}

#[derive(Parser)]
#[command(name = "adcfit", version, about = "Diffusion-coefficient recovery from tracer observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed recorded in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweep cells (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a labelled box phantom mesh.
    MeshGen,
    /// Integrate the diffusion model forward in time.
    Forward,
    /// Produce synthetic observations with known ground truth.
    Synth,
    /// Recover diffusion coefficients and boundary data from observations.
    Invert,
    /// Run a grid of inversions over regularization, steps and noise.
    Sweep,
    /// Convert signal ratios to contrast concentrations via the MPRAGE model.
    Concentration,
    /// Reduce DTI eigenvalue maps to per-region statistics and ADC estimates.
    Dti,
    /// Sample voxel data onto a mesh (raw, Gaussian-smoothed, or
    /// CSF-projected boundaries).
    Preprocess,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::MeshGen => "mesh-gen",
            Command::Forward => "forward",
            Command::Synth => "synth",
            Command::Invert => "invert",
            Command::Sweep => "sweep",
            Command::Concentration => "concentration",
            Command::Dti => "dti",
            Command::Preprocess => "preprocess",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn parse_config<T: serde::de::DeserializeOwned>(bytes: &[u8], path: &std::path::Path) -> Result<T, CliError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Config(format!("{}: at key '{}': {}", path.display(), e.path(), e.inner())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    }
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let bytes = std::fs::read(config_path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", config_path.display())))?;
    let config_sha256 = hex(&Sha256::digest(&bytes));
    let base = config_path.parent().unwrap_or(std::path::Path::new(".")).to_path_buf();

    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Config(format!("creating {}: {e}", cli.out.display())))?;

    let mut manifest = manifest::RunManifest::new(cli.command.name(), cli.seed.unwrap_or(0), config_sha256);
    match cli.command {
        Command::MeshGen => commands::mesh_gen(parse_config(&bytes, config_path)?, &cli.out, &mut manifest)?,
        Command::Forward => commands::forward(parse_config(&bytes, config_path)?, &base, &cli.out, &mut manifest)?,
        Command::Synth => commands::synth(parse_config(&bytes, config_path)?, &base, &cli.out, cli.seed, &mut manifest)?,
        Command::Invert => commands::invert(parse_config(&bytes, config_path)?, &base, &cli.out, &mut manifest)?,
        Command::Sweep => commands::run_sweep(parse_config(&bytes, config_path)?, &base, &cli.out, cli.seed, &mut manifest)?,
        Command::Concentration => commands::concentration(parse_config(&bytes, config_path)?, &base, &cli.out, &mut manifest)?,
        Command::Dti => commands::dti(parse_config(&bytes, config_path)?, &base, &cli.out, &mut manifest)?,
        Command::Preprocess => commands::preprocess(parse_config(&bytes, config_path)?, &base, &cli.out, &mut manifest)?,
    }
    manifest.write(&cli.out)?;
    Ok(())
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
