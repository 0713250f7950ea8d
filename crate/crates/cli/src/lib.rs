//! Command-line front end for the tempora workspace: configuration
//! parsing, the pipeline stages behind each subcommand, and hyperparameter
//! sweeps. The heavy lifting lives in `tempora-core`; this crate wires it
//! to TOML configs and CSV artifacts.

pub mod config;
pub mod pipeline;
pub mod sweep;

pub use config::RunConfig;
pub use pipeline::{run_backtest, run_backtest_on, run_generate, run_report, run_train, BacktestOutput};
pub use sweep::{run_sweep, SweepSpec};
