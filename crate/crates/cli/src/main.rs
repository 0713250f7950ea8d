//! `tempora` binary: generate panels, train ensembles, run backtests,
//! sweep hyperparameters and print reports, all driven by one TOML config.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on data errors,
//! 4 on runtime errors. Diagnostics go to stderr; only `report` writes to
//! stdout.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tempora_cli::config::RunConfig;
use tempora_cli::{pipeline, sweep};
use tempora_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(
    name = "tempora",
    about = "Robust ranking pipeline for era-grouped panels",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic panel CSV.
    Generate(CommonArgs),
    /// Train the configured ensemble members and serialize them.
    Train(CommonArgs),
    /// Run the online backtest and write prediction, Corr and summary CSVs.
    Backtest(CommonArgs),
    /// Grid-search boost hyperparameters against validation Sharpe.
    Sweep(CommonArgs),
    /// Print a summary of an earlier backtest in the output directory.
    Report(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Generate(c)
            | Command::Train(c)
            | Command::Backtest(c)
            | Command::Sweep(c)
            | Command::Report(c) => c,
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = cli.command.common();
    let mut config = RunConfig::load(&common.config)?;
    config.apply_overrides(common.seed, common.out.clone());

    match &cli.command {
        Command::Generate(_) => {
            let path = pipeline::run_generate(&config)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Train(_) => {
            let paths = pipeline::run_train(&config)?;
            eprintln!("trained {} members under {}", paths.len(), config.output.dir.display());
        }
        Command::Backtest(_) => {
            let output = pipeline::run_backtest(&config)?;
            eprintln!(
                "scored {} test eras; artifacts under {}",
                output.combined.len(),
                config.output.dir.display()
            );
        }
        Command::Sweep(_) => {
            let (path, rows) = sweep::run_sweep(&config)?;
            eprintln!("swept {} cells; results in {}", rows.len(), path.display());
        }
        Command::Report(_) => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            pipeline::run_report(&config, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Config => ExitCode::from(2),
                ErrorClass::Data => ExitCode::from(3),
                ErrorClass::Runtime => ExitCode::from(4),
            }
        }
    }
}
