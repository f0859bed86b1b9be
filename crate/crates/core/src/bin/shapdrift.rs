use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shapdrift::runner::{self, RunConfig};

#[derive(Parser)]
#[command(name = "shapdrift", version, about = "Continual-learning runs with SHAP explanation drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, explain and write every artifact.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Runs this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        workers: Option<usize>,
    },
    /// Check a config without computing anything.
    Validate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Redraw plots and the summary table from an existing drift CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "drift")]
        title: String,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> shapdrift::Result<()> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            workers,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let summary = runner::run(&cfg)?;
            for s in &summary.seeds {
                for log in &s.outcome.logs {
                    println!(
                        "seed {} {:6} final average accuracy {:.3}",
                        s.seed,
                        log.strategy.name(),
                        log.final_average_accuracy()
                    );
                }
            }
            println!("wrote {} files to {} (config {})", summary.files.len() + 1, summary.out_dir.display(), &summary.config_hash[..12]);
        }
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config)?;
            cfg.validate()?;
            println!("ok: {} ({})", config.display(), cfg.hash());
        }
        Command::Report { csv, out, title } => {
            for p in runner::report(&csv, &out, &title)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
