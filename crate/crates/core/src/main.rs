use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use histda::cli::{self, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "histda", version, about = "Histogram-loss sensor calibration with domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random stream; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and evaluate it on the target test split.
    Train(Common),
    /// Train every ablation mode on the same splits and seeds.
    Ablate(Common),
    /// Grid search over bin count and entropy weight.
    Gridsearch(Common),
    /// Write the synthetic splits as feature CSVs.
    Synth(Common),
}

fn run(command: Command) -> histda::Result<()> {
    let (common, f): (Common, fn(&RunConfig) -> histda::Result<()>) = match command {
        Command::Train(c) => (c, |cfg| {
            let r = cli::cmd_train(cfg)?;
            println!("best epoch {}: {}", r.best_epoch, r.target_test);
            Ok(())
        }),
        Command::Ablate(c) => (c, |cfg| {
            print!("{}", cli::cmd_ablate(cfg)?.to_table());
            Ok(())
        }),
        Command::Gridsearch(c) => (c, |cfg| {
            let r = cli::cmd_gridsearch(cfg)?;
            let best = &r.entries[r.best_index];
            println!("best: bins {} alpha_inf {}", best.bins, best.alpha_inf);
            Ok(())
        }),
        Command::Synth(c) => (c, |cfg| {
            for p in cli::cmd_synth(cfg)? {
                println!("{}", p.display());
            }
            Ok(())
        }),
    };
    let cfg = RunConfig::load(&common.config, &Overrides { out: common.out, seed: common.seed })?;
    f(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
