use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use locdreamer::cli::{self, Invocation, SEED_ENV};

#[derive(Parser)]
#[command(name = "locdreamer", version, about = "World-model target tracking and anchor scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate train/test trajectories with readings from every anchor.
    Simulate(Common),
    /// Train the world model on real readings.
    Pretrain(Common),
    /// Train world model, actor and critic in imagination.
    ImagineTrain(Common),
    /// Score all methods and export plot data.
    Evaluate(Common),
    /// Export the scheduling heatmap of a checkpoint.
    Heatmap(Common),
    /// Convert a static-point ranging survey into trajectory CSV.
    ConvertDataset(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Validate inputs and exit without writing anything.
    #[arg(long)]
    dry_run: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (run, c): (fn(&Invocation) -> locdreamer::Result<Vec<PathBuf>>, Common) = match cli.command {
        Command::Simulate(c) => (cli::cmd_simulate, c),
        Command::Pretrain(c) => (cli::cmd_pretrain, c),
        Command::ImagineTrain(c) => (cli::cmd_imagine_train, c),
        Command::Evaluate(c) => (cli::cmd_evaluate, c),
        Command::Heatmap(c) => (cli::cmd_heatmap, c),
        Command::ConvertDataset(c) => (cli::cmd_convert_dataset, c),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = Invocation::prepare(
        c.config.as_deref(),
        c.seed,
        c.out.as_deref(),
        c.checkpoint.as_deref(),
        c.dry_run,
        env_seed.as_deref(),
    )
    .and_then(|inv| run(&inv));
    match result {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
