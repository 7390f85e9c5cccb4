use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fpsim::config::ExperimentConfig;
use fpsim::report::run_sweep;

/// Federated learning simulator with relevance-guided pruning.
#[derive(Parser)]
#[command(name = "fpsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy / pruning-rate cell of a config.
    Run {
        config: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
        /// Run sweep cells concurrently.
        #[arg(long)]
        parallel: bool,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config and print it with all defaults filled in.
    Validate { config: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("{}", cfg.to_json_pretty());
            println!("cells: {}", cfg.cells().iter().map(|c| c.stem()).collect::<Vec<_>>().join(", "));
        }
        Command::Run {
            config,
            outdir,
            parallel,
            seed,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (results, files) = run_sweep(&cfg, &outdir, parallel).map_err(|e| Failure::Runtime(e.to_string()))?;
            for r in &results {
                if let Some(m) = r.final_map() {
                    println!("{:<9} q={:<4} final mAP {:.4}", r.strategy, r.q, m);
                }
            }
            println!("wrote {}", files.records.display());
            println!("wrote {}", files.summary.display());
            println!("wrote {}", files.plot.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("FPSIM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("invalid config: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
