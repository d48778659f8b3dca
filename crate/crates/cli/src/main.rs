//! `bathcls`: dataset statistics, gradient checks, training, evaluation,
//! prediction, hyperparameter sweeps and inference benchmarks.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage or config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "bathcls", version, about = "Bathroom image quality classifier")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "BATHCLS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print good/bad counts per split of a manifest.
    DatasetStats {
        manifest: PathBuf,
        /// Also write the counts as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Build a manifest CSV from a <split>/<label>/ image tree.
    Manifest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer and both models.
    Gradcheck {
        #[arg(long, default_value_t = bathcls::gradsuite::DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train one model and write weights, log and report.
    Train { config: PathBuf },
    /// Score trained weights on the test split.
    Eval {
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Score one image; prints `score=<f> label=<good|bad>`.
    Predict {
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        image: PathBuf,
    },
    /// Two-phase hyperparameter sweep.
    Sweep {
        #[command(subcommand)]
        phase: SweepPhase,
    },
    /// Time single-image inference for both variants.
    Bench {
        config: PathBuf,
        /// Weights for the configured variant; random weights otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 50)]
        runs: usize,
    },
}

#[derive(Subcommand)]
enum SweepPhase {
    /// Every variant and grid point at the phase-1 size.
    Phase1 { config: PathBuf },
    /// Selected configurations at every phase-2 size.
    Phase2 {
        config: PathBuf,
        #[arg(long)]
        phase1: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::DatasetStats { manifest, json } => commands::dataset_stats(&manifest, json.as_deref()),
        Command::Manifest { root, out } => commands::manifest(&root, &out),
        Command::Gradcheck { trials, seed, report } => commands::gradcheck(trials, seed, report.as_deref()),
        Command::Train { config } => commands::train(&RunConfig::load(&config)?),
        Command::Eval { config, weights } => commands::eval(&RunConfig::load(&config)?, &weights),
        Command::Predict { config, weights, image } => {
            commands::predict_image(&RunConfig::load(&config)?, &weights, &image)
        }
        Command::Sweep { phase } => match phase {
            SweepPhase::Phase1 { config } => commands::sweep_phase1(&RunConfig::load(&config)?),
            SweepPhase::Phase2 { config, phase1 } => commands::sweep_phase2(&RunConfig::load(&config)?, &phase1),
        },
        Command::Bench {
            config,
            weights,
            warmup,
            runs,
        } => commands::bench(&RunConfig::load(&config)?, weights.as_deref(), warmup, runs),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            if e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
