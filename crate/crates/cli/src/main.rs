use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use mergan_cli::commands;
use mergan_cli::config::{RunConfig, SEED_ENV};
use mergan_cli::CliError;

/// Sequential conditional GAN training with memory replay.
#[derive(Parser)]
#[command(name = "mergan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every task of a run described by a config file.
    Train {
        config: PathBuf,
        /// Continue from the run's latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Write a PGM grid: one row per category, one column per latent vector.
    Sample {
        checkpoint: PathBuf,
        /// Comma-separated 1-based categories.
        #[arg(long, value_delimiter = ',', required = true)]
        categories: Vec<usize>,
        /// Latent vectors per row.
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        z_seed: u64,
        /// Separator width in pixels.
        #[arg(long, default_value_t = 1)]
        separator: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: accuracy, reverse accuracy and Fréchet distance.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
    },
    /// Check every loss gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let mut out = std::io::stdout();
    match cli.command {
        Command::Train { config, resume } => {
            let cfg = RunConfig::load(&config)?;
            let s = commands::train(&cfg, resume, &mut std::io::stderr())?;
            println!(
                "trained {} tasks, {} iterations; metrics in {}",
                s.tasks,
                s.global_iter,
                cfg.output_dir.join("metrics.csv").display()
            );
        }
        Command::Sample {
            checkpoint,
            categories,
            n,
            z_seed,
            separator,
            out: path,
        } => commands::sample(&checkpoint, &categories, n, z_seed, separator, &path)?,
        Command::Eval { checkpoint, config } => {
            let cfg = RunConfig::load(&config)?;
            commands::eval(&checkpoint, &cfg, &mut out)?;
        }
        Command::Gradcheck {
            instances,
            seed,
            inject_fault,
        } => {
            let results = commands::gradcheck(instances, seed, inject_fault.as_deref(), &mut out)?;
            if !results.iter().all(|r| r.passed()) {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let help = format!(
        "{}\n{SEED_ENV} overrides the config seed.\nExit codes: 0 success, 1 configuration or I/O error, 2 numerical failure.",
        RunConfig::help_table()
    );
    let matches = Cli::command().after_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
