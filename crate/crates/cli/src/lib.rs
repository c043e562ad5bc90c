//! Library surface of the CLI so the subcommands can be driven from tests.

pub mod args;
pub mod commands;

use anyhow::Result;

use args::{Cli, Command};

/// Dispatch a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let threads = match &cli.command {
        Command::Generate(a) => a.run.threads,
        Command::Fit(a) => a.run.threads,
        Command::Evaluate(a) => a.run.threads,
        Command::Replicate(a) => a.run.threads,
    };
    if threads > 0 {
        // Ignore the error from a second initialization (tests call run()
        // repeatedly in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match &cli.command {
        Command::Generate(a) => commands::cmd_generate(a),
        Command::Fit(a) => commands::cmd_fit(a),
        Command::Evaluate(a) => commands::cmd_evaluate(a),
        Command::Replicate(a) => commands::cmd_replicate(a),
    }
}
