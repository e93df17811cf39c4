//! Command-line front end for the `jne-core` estimators: CSV ingestion,
//! estimator dispatch, synthetic benchmarks and output files.

pub mod args;
pub mod commands;
pub mod error;
pub mod fit;
pub mod io;
pub mod sweep;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => commands::run_generate(a),
        Command::Estimate(a) => commands::run_estimate(a),
        Command::Evaluate(a) => commands::run_evaluate(a),
        Command::Bandwidth(a) => commands::run_bandwidth(a),
        Command::Sweep(a) => sweep::run_sweep(a),
    }
}
