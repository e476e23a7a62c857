use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neighbor_confidence::pipeline::{self, Overrides, RunConfig};
use neighbor_confidence::Result;

/// Prediction confidence from feature-space distance to training neighbors.
#[derive(Debug, Parser)]
#[command(name = "neighbor-confidence", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (JSON). Defaults to the bundled demo configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Corpus generation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Labeling budget per expansion batch.
    #[arg(long, global = true)]
    budget: Option<usize>,

    /// Acceptable reconstruction error.
    #[arg(long, global = true)]
    tolerance: Option<f64>,

    /// Neighbors averaged into one distance.
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic point-cloud corpus.
    Generate,
    /// Train the autoencoder on the train split.
    Train,
    /// Write latent vectors and reconstruction errors for every cloud.
    Embed,
    /// Fit the distance-to-error calibration and write the error-vs-distance report.
    Fit,
    /// Trust or abstain on every new sample.
    Score,
    /// Run the batch-wise training-set expansion.
    Select,
    /// Write the 2-component PCA reports.
    Report,
    /// All of the above, in order.
    Run,
}

fn execute(cli: &Cli) -> Result<Vec<String>> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::demo(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        budget: cli.budget,
        tolerance: cli.tolerance,
        k: cli.k,
    })?;
    log::info!("run directory {}", cfg.out.display());
    Ok(match cli.command {
        Command::Generate => vec![pipeline::cmd_generate(&cfg)?.summary()],
        Command::Train => vec![pipeline::cmd_train(&cfg)?.summary()],
        Command::Embed => vec![pipeline::cmd_embed(&cfg)?.summary()],
        Command::Fit => vec![pipeline::cmd_fit(&cfg)?.summary()],
        Command::Score => vec![pipeline::cmd_score(&cfg)?.summary()],
        Command::Select => vec![pipeline::cmd_select(&cfg)?.summary()],
        Command::Report => vec![pipeline::cmd_report(&cfg)?.summary()],
        Command::Run => pipeline::run_all(&cfg)?.summary_lines(),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
