//! Experiment harness CLI.
//!
//! `bench run --config cfg.json --out results/` runs every configured
//! (scene, strategy) pair and writes report.csv / report.txt plus per-run
//! trajectory and map dumps into the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use active_objmap::bench::{run_benchmark, BenchConfig, NoiseLevel};

#[derive(Parser)]
#[command(name = "bench", about = "Tabletop exploration benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark described by a JSON config file.
    Run {
        /// Benchmark config (scenes, strategies, noise, budget, seed).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for reports and per-run artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Use ground-truth ids for detection-to-object association.
        #[arg(long)]
        oracle_association: bool,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's noise level.
        #[arg(long, value_parser = clap::value_parser!(NoiseLevel))]
        noise: Option<NoiseLevel>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            oracle_association,
            seed,
            noise,
        } => {
            let mut cfg = match BenchConfig::from_file(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            if oracle_association {
                cfg.oracle_association = true;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(noise) = noise {
                cfg.noise = noise;
            }
            match run_benchmark(&cfg, Some(&out)) {
                Ok(report) => {
                    print!("{}", report.table());
                    println!("reports written to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
