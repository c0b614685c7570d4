//! `pesin`: command line front end for the experiment pipelines.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pesin_core::experiment::{run_experiment, ExperimentConfig, OutputFormat, Pipeline};
use pesin_core::PesinError;

#[derive(Parser)]
#[command(name = "pesin", version, about = "Entropy, Lyapunov spectra and stable manifolds of random dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and cache it in PESN format.
    Simulate(Common),
    /// Lyapunov spectrum along one orbit.
    Spectrum(Common),
    /// Monte Carlo entropy curve and rate.
    Entropy(Common),
    /// Entropy against the integrated positive exponents.
    PesinVerify(Common),
    /// Integrability audits.
    Audit(Common),
    /// Local stable-manifold charts.
    StableManifold(Common),
    /// Holonomy between two transversal discs.
    Holonomy(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Command {
    fn split(self) -> (Pipeline, Common) {
        match self {
            Command::Simulate(c) => (Pipeline::Simulate, c),
            Command::Spectrum(c) => (Pipeline::Spectrum, c),
            Command::Entropy(c) => (Pipeline::Entropy, c),
            Command::PesinVerify(c) => (Pipeline::PesinVerify, c),
            Command::Audit(c) => (Pipeline::Audit, c),
            Command::StableManifold(c) => (Pipeline::StableManifold, c),
            Command::Holonomy(c) => (Pipeline::Holonomy, c),
        }
    }
}

fn configure(pipeline: Pipeline, flags: Common) -> Result<ExperimentConfig, PesinError> {
    let mut cfg = ExperimentConfig::load(&flags.config)?;
    cfg.pipeline = Some(pipeline);
    if let Some(dir) = flags.out_dir {
        cfg.out_dir = Some(dir);
    }
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(t) = flags.threads {
        cfg.threads = t;
    }
    if let Some(f) = flags.format {
        cfg.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    cfg.validate()?;
    Ok(cfg)
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
    let (pipeline, flags) = cli.command.split();
    let cfg = match configure(pipeline, flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run_experiment(&cfg) {
        Ok(manifest) => {
            let dir = cfg.out_dir();
            match &manifest.error {
                None => println!("{}: ok ({:.2} s), outputs in {}", manifest.pipeline, manifest.wall_time_s, dir.display()),
                Some(msg) => eprintln!("{}: error: {msg}", manifest.pipeline),
            }
            ExitCode::from(manifest.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: cannot write outputs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
