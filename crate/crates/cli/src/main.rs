//! Batch pipeline CLI: stage commands over a config file, with resumable
//! manifest-tracked artifacts and a full offline mock mode.

mod config;
mod manifest;
mod mock;
mod stages;

use clap::{Parser, Subcommand};
use config::PipelineConfig;
use manifest::OutputLock;
use stages::{render_report, run_all, run_stage, CliError, Stage, StageCtx};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "haven",
    version,
    about = "Detect disclosure posts, cluster them into topics, and map community support"
)]
struct Cli {
    /// Pipeline config file (flat dotted keys).
    #[arg(long, global = true, default_value = "pipeline.conf")]
    config: PathBuf,

    /// Output directory, overriding `output.dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed, overriding `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Re-run stages even when inputs and parameters are unchanged.
    #[arg(long, global = true)]
    force: bool,

    /// Replace every backend with deterministic offline mocks.
    #[arg(long, global = true)]
    mock: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load, validate, filter, and partition the post corpus.
    Ingest,
    /// Classify unlabeled posts and merge labels into the corpus.
    Detect,
    /// Embed self-disclosure posts into 384-d vectors.
    Embed,
    /// Project embeddings into the clustering space (plus a 2-d export).
    Reduce,
    /// Density-cluster the reduced layout.
    Cluster,
    /// Summarize one topic per cluster.
    Summarize,
    /// Extract the support pool and map per-cluster supports onto it.
    Support,
    /// Cross-validate the detector over the human-labeled subset.
    Evaluate,
    /// Run every stage in order, then render the report.
    RunAll,
    /// Render report.md from existing stage artifacts.
    Report,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut config = PipelineConfig::parse_file(&cli.config).map_err(|e| CliError::Config(e.0))?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    log::debug!("resolved config:\n{}", config.serialize_dotted());

    let out_dir = config.output_dir.clone();
    let _lock = OutputLock::acquire(&out_dir)?;
    let ctx = StageCtx {
        config: &config,
        out: &out_dir,
        force: cli.force,
        mock: cli.mock,
    };

    match cli.command {
        Command::Ingest => run_stage(Stage::Ingest, &ctx).map(drop),
        Command::Detect => run_stage(Stage::Detect, &ctx).map(drop),
        Command::Embed => run_stage(Stage::Embed, &ctx).map(drop),
        Command::Reduce => run_stage(Stage::Reduce, &ctx).map(drop),
        Command::Cluster => run_stage(Stage::Cluster, &ctx).map(drop),
        Command::Summarize => run_stage(Stage::Summarize, &ctx).map(drop),
        Command::Support => run_stage(Stage::Support, &ctx).map(drop),
        Command::Evaluate => run_stage(Stage::Evaluate, &ctx).map(drop),
        Command::RunAll => run_all(&ctx),
        Command::Report => render_report(&ctx),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(error) = run(&cli) {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}
