//! Command-line front end for `uavrisk-core`.
//!
//! Each subcommand reads annotation files, runs the relevant part of the
//! pipeline and writes its reports into the output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use commands::{run_assess, run_command, AssessSummary, Cli, Command, Outcome};
pub use config::{CommonArgs, RunConfig};
pub use error::CliError;

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return u8::try_from(e.exit_code()).unwrap_or(2);
        }
    };
    match run_command(&cli.command) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", outcome.summary);
            for f in &outcome.files {
                let _ = writeln!(stdout, "wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
