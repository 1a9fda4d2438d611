//! Command-line front end for the fuzzy rating-scale pipeline.
//!
//! Exit status: 0 on success, 2 for input problems, 3 when the run finished
//! but at least one convergence warning was raised (or a numeric stage
//! failed outright).

mod bundle;
mod schema;
mod steps;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "firtree", version, about = "Fuzzy conversion of rating-scale data", long_about = None)]
struct Cli {
    /// Log progress details to stderr
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Simulate(steps::SimulateArgs),
    Trim(steps::TrimArgs),
    FitIrtree(steps::FitIrtreeArgs),
    Fuzzify(steps::FuzzifyArgs),
    Regress(steps::RegressArgs),
    Run(steps::RunArgs),
    Report(steps::ReportArgs),
}

/// Maps a pipeline failure to an exit status: malformed input is 2, numeric
/// trouble (domain failures, undefined quantities) is 3 like any other
/// convergence problem, and anything unclassified counts as input error.
fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<firtree::Error>() {
            return match e {
                firtree::Error::Domain(_) | firtree::Error::Undefined(_) => 3,
                firtree::Error::Input(_)
                | firtree::Error::Tree(_)
                | firtree::Error::Io(_)
                | firtree::Error::Csv(_) => 2,
            };
        }
    }
    2
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let default_level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Simulate(args) => steps::cmd_simulate(args),
        Command::Trim(args) => steps::cmd_trim(args),
        Command::FitIrtree(args) => steps::cmd_fit_irtree(args),
        Command::Fuzzify(args) => steps::cmd_fuzzify(args),
        Command::Regress(args) => steps::cmd_regress(args),
        Command::Run(args) => steps::cmd_run(args),
        Command::Report(args) => steps::cmd_report(args),
    };
    match result {
        Ok(0) => 0,
        Ok(n) => {
            log::warn!("{n} convergence warnings; see the bundle manifest");
            3
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            classify(&err)
        }
    }
}
