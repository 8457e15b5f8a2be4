//! `idea` command line: run experiments, aggregate reports, inspect asset
//! files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use idea_harness::config::ExperimentConfig;
use idea_harness::{logging, report, runner, HarnessError};

#[derive(Parser)]
#[command(
    name = "idea",
    about = "Test-time adaptation simulator: asset library, bridge solver, and coverage-gated loop"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment described by a key=value config file.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Load a starting asset library before the run.
        #[arg(long)]
        assets_in: Option<PathBuf>,
        /// Save the first repetition's final library after the run.
        #[arg(long)]
        assets_out: Option<PathBuf>,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Aggregate run outputs into a table and plot-ready series files.
    Report {
        /// Directory containing rows_*.csv and summary_*.txt files.
        #[arg(long = "in")]
        input: PathBuf,
        /// Path for the aggregate table.
        #[arg(long)]
        out: PathBuf,
    },
    /// Asset-library file utilities.
    Assets {
        #[command(subcommand)]
        command: AssetsCommand,
    },
}

#[derive(Subcommand)]
enum AssetsCommand {
    /// Print version, counts, dimensions, and an uncertainty histogram.
    Inspect { path: PathBuf },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let level = logging::level_from_env()?;
    match cli.command {
        Command::Run {
            config,
            assets_in,
            assets_out,
            seed,
            out_dir,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| {
                HarnessError::Config(format!("cannot read config {}: {e}", config.display()))
            })?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(dir) = out_dir {
                cfg.out_dir = Some(dir);
            }
            if cfg.out_dir.is_none() {
                cfg.out_dir = Some(PathBuf::from("idea-out"));
            }
            cfg.assets_in = assets_in;
            cfg.assets_out = assets_out;
            let records = runner::run_experiment(&cfg)?;
            logging::info(
                level,
                &format!(
                    "{} repetition(s) written to {}",
                    records.len(),
                    cfg.out_dir.as_ref().expect("set above").display()
                ),
            );
            Ok(())
        }
        Command::Report { input, out } => {
            let table = report::report_dir(&input, &out)?;
            print!("{table}");
            Ok(())
        }
        Command::Assets {
            command: AssetsCommand::Inspect { path },
        } => {
            let lib = runner::load_assets(&path)?;
            println!("format: {}", idea_core::library::FORMAT_VERSION);
            println!("assets: {}", lib.len());
            println!("capacity: {}", lib.capacity());
            println!(
                "dimensions: prompt_len={} feature_dim={}",
                lib.prompt_len(),
                lib.feature_dim()
            );
            let max_u = lib
                .assets()
                .iter()
                .map(|a| a.uncertainty())
                .fold(0.0f64, f64::max);
            println!("uncertainty histogram (10 bins over [0, {max_u:.4}]):");
            let mut bins = [0usize; 10];
            for asset in lib.assets() {
                let t = if max_u > 0.0 {
                    (asset.uncertainty() / max_u * 10.0).min(9.0)
                } else {
                    0.0
                };
                bins[t as usize] += 1;
            }
            for (i, count) in bins.iter().enumerate() {
                let lo = max_u * i as f64 / 10.0;
                let hi = max_u * (i + 1) as f64 / 10.0;
                println!("  [{lo:.4}, {hi:.4}): {count}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(HarnessError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(HarnessError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(2)
        }
    }
}
