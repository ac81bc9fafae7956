mod args;
mod commands;
mod config;
mod error;
mod manifest;

use clap::{CommandFactory, FromArgMatches};

use crate::args::Cli;

fn main() {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let result = config::resolve(&cli, &matches).and_then(|config| commands::run(&config));
    if let Err(e) = result {
        eprintln!("{}", serde_json::json!({ "error": e }));
        std::process::exit(e.exit_code());
    }
}
