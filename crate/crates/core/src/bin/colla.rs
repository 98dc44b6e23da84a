use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use colla::error::{Error, Result};
use colla::io;

#[derive(Parser)]
#[command(name = "colla", version, about = "Collective lifelong learning experiments")]
struct Cli {
    /// Worker threads for trials and grid cells (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Validate a dataset manifest and write the tasks as ingested.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset from a generator spec.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired comparison of several experiments.
    Compare {
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// TOML file with split_seed, stream_seed and topology_seed applied to every config.
        #[arg(long)]
        seed_block: Option<PathBuf>,
    },
    /// Hyperparameter grid search on validation splits.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(verb: Verb) -> Result<()> {
    match verb {
        Verb::Ingest { config, out } => {
            let tasks = io::ingest_to_dir(&config, &out)?;
            let rows: usize = tasks.iter().map(|t| t.n_instances()).sum();
            println!("{} tasks, {} rows, dimension {}", tasks.len(), rows, tasks[0].dim());
        }
        Verb::Synth { config, out } => {
            let text =
                std::fs::read_to_string(&config).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            let spec: io::SynthSpec =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            let data = io::write_synth(&spec, &out)?;
            println!("{} tasks written to {}", data.tasks.len(), out.display());
        }
        Verb::Run { config, out } => {
            let result = io::run_config_file(&config, &out)?;
            println!(
                "{}: {} trials, {} steps",
                result.label,
                result.trials.len(),
                result.n_steps()
            );
        }
        Verb::Compare {
            config,
            out,
            seed_block,
        } => {
            let mut configs = config
                .iter()
                .map(|p| io::RunConfig::load(p))
                .collect::<Result<Vec<_>>>()?;
            let seeds = seed_block.as_deref().map(io::load_seed_block).transpose()?;
            let results = io::compare(&mut configs, seeds, &out)?;
            println!("compared {} configs", results.len());
        }
        Verb::Grid { config, out } => {
            let outcome = io::grid_to_dir(&io::RunConfig::load(&config)?, &out)?;
            let m = outcome.best.model;
            println!(
                "best of {} cells: dict_size={} lambda={} mu={} rho={}",
                outcome.cells.len(),
                m.dict_size,
                m.lambda,
                m.mu,
                m.rho
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let outcome = match pool.build() {
        Ok(pool) => pool.install(|| execute(cli.verb)),
        Err(e) => Err(Error::Config(format!("thread pool: {e}"))),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let text = s.to_string();
                if !msg.contains(&text) {
                    msg.push_str(&format!("\n  caused by: {text}"));
                }
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
