use std::path::PathBuf;
use std::process::ExitCode;

use attnop_cli::commands::{complexity_text, sweep_csv};
use attnop_cli::{
    cmd_complexity, cmd_datagen, cmd_eval, cmd_sweep_resolution, cmd_train, cmd_verify_convergence, CliError,
    CliResult, ExperimentConfig,
};
use clap::{Args, Parser, Subcommand};

/// Transformer neural operators: data generation, training, evaluation and
/// verification.
#[derive(Parser)]
#[command(name = "attnop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the command's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write dataset containers for the config's generator blocks.
    Datagen(Common),
    /// Train a model and write checkpoints and the loss history.
    Train(Common),
    /// Evaluate a checkpoint on the test set and write metrics.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Zero-shot evaluation across resolutions, without retraining.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Points per axis; overrides eval.resolutions.
        #[arg(long, value_delimiter = ',')]
        resolutions: Option<Vec<usize>>,
    },
    /// Closed-form parameter counts and evaluation costs.
    Complexity(Common),
    /// Monte-Carlo convergence check of continuum attention.
    Verify(Common),
}

fn load(common: &Common) -> CliResult<ExperimentConfig> {
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Datagen(c) => {
            for (name, meta) in cmd_datagen(&load(&c)?, &c.out, c.seed)? {
                println!("{name}: {} samples, {} points, {}", meta.n_samples, meta.n_points, c.out.join(&name).display());
            }
        }
        Command::Train(c) => {
            let run = cmd_train(&load(&c)?, &c.out, c.seed)?;
            if let Some(last) = run.history.last() {
                println!("epoch {}: train loss {:.6e}", last.epoch, last.train_loss);
            }
            println!("checkpoint: {}", run.checkpoint.display());
        }
        Command::Eval { common, checkpoint } => {
            let m = cmd_eval(&load(&common)?, &checkpoint, &common.out)?;
            println!(
                "median rel L2 {:.6e} (sample {}), mean {:.6e}, worst {:.6e} (sample {})",
                m.median, m.median_index, m.mean, m.max, m.worst_index
            );
        }
        Command::Sweep { common, checkpoint, resolutions } => {
            let rows = cmd_sweep_resolution(&load(&common)?, &checkpoint, resolutions.as_deref(), &common.out)?;
            print!("{}", sweep_csv(&rows));
        }
        Command::Complexity(c) => print!("{}", complexity_text(&cmd_complexity(&load(&c)?, &c.out)?)),
        Command::Verify(c) => {
            let reports = cmd_verify_convergence(&load(&c)?, &c.out, c.seed)?;
            for r in &reports {
                println!(
                    "{:?}: slope {:.3}, {} inversions, {}",
                    r.kind,
                    r.slope,
                    r.inversions,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            if reports.iter().any(|r| !r.pass) {
                return Err(CliError::Numeric("convergence check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
