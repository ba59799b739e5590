//! Command-line pipeline: dataset build, two-phase training, the loss
//! ablation matrix, evaluation, and embedding analyses.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

mod commands;
mod config;
mod rundir;

use clap::{Parser, Subcommand};
use cocon::losses::Ablation;
use cocon::CoconError;
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cocon", version, about = "Cooperative-contrastive multi-view training")]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; relative paths resolve under $COCON_RUN_DIR.
    #[arg(long, global = true, default_value = "run")]
    run: PathBuf,
    /// Redo work even if this run directory already holds the outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum AblationArg {
    Cpc,
    SimCpc,
    SyncCpc,
    Cocon,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Ablation {
        match a {
            AblationArg::Cpc => Ablation::Cpc,
            AblationArg::SimCpc => Ablation::SimCpc,
            AblationArg::SyncCpc => Ablation::SyncCpc,
            AblationArg::Cocon => Ablation::Cocon,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the dataset manifest.
    Dataset,
    /// Train phase 1 (per-view predictive) or phase 2 (joint objective).
    Train {
        #[arg(long)]
        phase: u8,
        /// Objective for phase 2.
        #[arg(long, value_enum, default_value = "cocon")]
        ablation: AblationArg,
    },
    /// Classify with a linear probe or fine-tuning.
    Eval {
        /// "random" or a checkpoint directory (absolute or run-relative).
        #[arg(long)]
        init: String,
        /// Override the config's eval mode (probe | finetune).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Embedding export and qualitative analyses.
    Analyze(commands::analyze::AnalyzeArgs),
    /// The five-column loss-ablation comparison.
    ReproTable1 {
        /// Seeds to average; seed k uses train.seed + k.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, CoconError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), CoconError> {
    let config = load_config(&cli.config)?;
    let run_dir = rundir::resolve_run_dir(&cli.run);
    match cli.cmd {
        Cmd::Dataset => commands::dataset::run(&config, &run_dir, cli.force),
        Cmd::Train { phase, ablation } => {
            commands::train::run(&config, &run_dir, phase, ablation.into(), cli.force)
        }
        Cmd::Eval { init, mode } => {
            commands::eval::run(&config, &run_dir, &init, mode.as_deref(), cli.force)
        }
        Cmd::Analyze(args) => commands::analyze::run(&config, &run_dir, &args, cli.force),
        Cmd::ReproTable1 { seeds } => commands::table1::run(&config, &run_dir, seeds, cli.force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                CoconError::Config(_) | CoconError::Parameter(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
