//! `fusebench`: synthesize data, train the denoiser pool and the scoring
//! network, fuse, evaluate, and reproduce the ablation/sweep experiments.
//!
//! Exit codes: 0 success, 1 configuration error, 2 missing artifact,
//! 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fusebench::commands;
use fusebench::config::{ExperimentConfig, Variant};
use fusebench_core::Error;

#[derive(Parser)]
#[command(name = "fusebench", version, about = "Pixel-wise denoiser ensemble fusion benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the variant (full, minus_mc, minus_sigma, patchwise,
    /// direct_weight, minus_fuse, minus_nll, normal).
    #[arg(long, global = true)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural clean-image corpus.
    GenCorpus,
    /// Synthesize the train/val/test/unlabeled datasets.
    Synthesize,
    /// Train every trainable pool member at its declared noise level.
    TrainPool,
    /// Train the scoring network for the configured variant.
    TrainScorer,
    /// Fuse the test images and export fused rasters plus weight maps.
    Fuse,
    /// Evaluate pool members, baselines and the fused result; write a report.
    Evaluate,
    /// Train/evaluate a set of variants and emit the comparison table.
    Ablate {
        /// Comma-separated variants (defaults to "full,normal").
        #[arg(long, default_value = "full,normal")]
        variants: String,
    },
    /// PSNR as a function of the fused pool size along sweep.order.
    PoolSweep,
    /// Fine-tune the best pool member on scorer-fused pseudo-labels.
    Distill,
}

fn run(cli: Cli) -> fusebench_core::Result<()> {
    let config_path = cli.config.ok_or_else(|| {
        Error::InvalidArgument("--config <path> is required for this command".into())
    })?;
    let cfg = ExperimentConfig::load(&config_path, cli.seed, cli.out, cli.variant)?;
    match cli.command {
        Command::GenCorpus => commands::cmd_gen_corpus(&cfg),
        Command::Synthesize => commands::cmd_synthesize(&cfg).map(|_| ()),
        Command::TrainPool => commands::cmd_train_pool(&cfg),
        Command::TrainScorer => commands::cmd_train_scorer(&cfg).map(|_| ()),
        Command::Fuse => commands::cmd_fuse(&cfg),
        Command::Evaluate => commands::cmd_evaluate(&cfg).map(|_| ()),
        Command::Ablate { variants } => {
            let parsed: Vec<Variant> = variants
                .split(',')
                .map(|s| Variant::parse(s.trim()))
                .collect::<fusebench_core::Result<Vec<_>>>()?;
            commands::cmd_ablate(&cfg, &parsed).map(|_| ())
        }
        Command::PoolSweep => commands::cmd_pool_sweep(&cfg).map(|_| ()),
        Command::Distill => commands::cmd_distill(&cfg).map(|_| ()),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::MissingArtifact(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
