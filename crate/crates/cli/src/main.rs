//! Single entry point for the pipeline: convert binaries to images,
//! ingest a labeled tree, balance and split the corpus, fine-tune,
//! evaluate, run the two-stage selection, and query the benchmark
//! catalog.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/runtime error. Every
//! executed subcommand writes a `run.meta` next to its primary output
//! recording the full flags and tool version, even when it fails.

mod commands;
mod meta;

use clap::error::ErrorKind;
use clap::Parser;

use commands::Cli;

/// Dispatch argv and map outcomes onto the exit-code contract.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version on stdout with success.
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    let meta_dir = cli.meta_dir();
    match cli.execute() {
        Ok(()) => {
            if let Err(e) = meta::write_run_meta(&meta_dir, &argv, "ok") {
                eprintln!("warning: could not write run.meta: {e}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let status = format!("error: {e:#}");
            if let Err(me) = meta::write_run_meta(&meta_dir, &argv, &status) {
                eprintln!("warning: could not write run.meta: {me}");
            }
            2
        }
    }
}

fn main() {
    std::process::exit(run(std::env::args().collect()));
}
