//! `scribal` — writer-identification pipeline over synthetic handwriting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure. Errors print one line: `error: <kind>: <reason>`.

use clap::Parser;

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "scribal", version, about = "Writer-identification pipeline toolkit")]
struct Cli {
    #[command(subcommand)]
    command: commands::Command,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = commands::dispatch(cli.command) {
        let (code, kind) = if e.is_config() {
            (2, "config")
        } else if e.is_numeric() {
            (4, "numeric")
        } else {
            (3, "data")
        };
        eprintln!("error: {kind}: {e}");
        std::process::exit(code);
    }
}
