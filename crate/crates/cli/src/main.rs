use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aot_lab::config::{seed_from_env, SEED_ENV};
use aot_lab::{commands, Options, Result};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Sample a language into a token shard.
    Gen,
    /// Exact entropy decompositions.
    Oracle,
    /// Tokenize, split and shard a text corpus.
    Pipeline,
    /// Train FW and BW models.
    Train,
    /// Final loss against matrix sparsity, and inverse density scans.
    Scan,
    /// Fine-tune trained models on a perturbed matrix.
    Update,
    /// FW and BW field losses on the prime-product language.
    Primes,
}

/// Forward and backward training on synthetic languages.
#[derive(Debug, Parser)]
#[command(name = "aot-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON config for the subcommand.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads across seeds and trials.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Switch to GPT1-size models, batch 200 and 600k training sentences.
    #[arg(long)]
    paper_scale: bool,
}

fn run(cli: &Cli) -> Result<String> {
    let opts = Options {
        out: cli.out.clone(),
        jobs: cli.jobs as usize,
        paper_scale: cli.paper_scale,
        seed_override: seed_from_env(std::env::var(SEED_ENV).ok().as_deref())?,
    };
    let f: fn(&Path, &Options) -> Result<String> = match cli.command {
        Command::Gen => commands::gen,
        Command::Oracle => commands::oracle,
        Command::Pipeline => commands::pipeline,
        Command::Train => commands::train,
        Command::Scan => commands::scan,
        Command::Update => commands::update,
        Command::Primes => commands::primes,
    };
    f(&cli.config, &opts)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("aot-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
