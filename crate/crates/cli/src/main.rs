//! `opinet`: graph sampling, experiment runs, corpus validation and analysis.
//!
//! Exit codes: 0 success, 1 validation or analysis failure, 2 configuration
//! error, 3 backend failure.

mod analyze;
mod config;
mod setup;
mod simulate;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use opinet_core::dataset::{self, AliasTable};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn failure(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }
}

#[derive(Parser, Debug)]
#[command(name = "opinet", version, about = "Opinion dynamics of networked LLM agents")]
struct Cli {
    /// Key-value settings file; flags override it, it overrides OPINET_* variables.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample one graph and print its topology and spectrum as JSON.
    Graph(setup::GraphArgs),
    /// Run experiments and write one record per experiment.
    Simulate(simulate::SimulateArgs),
    /// Compute curves, tables and spectral statistics over a corpus.
    Analyze(analyze::AnalyzeArgs),
    /// Check every record under a path against the schema.
    Validate(validate::ValidateArgs),
}

/// Options shared by commands that read records.
#[derive(Args, Debug, Clone)]
pub struct ReadArgs {
    /// Alias table mapping upstream keys to canonical ones (replaces the bundled table).
    #[arg(long, value_name = "FILE")]
    pub aliases: Option<PathBuf>,
}

impl ReadArgs {
    pub fn aliases(&self, r: &mut config::Resolver) -> Result<AliasTable, CliError> {
        let path: Option<String> = r.get_opt("aliases", self.aliases.as_ref().map(|p| p.display().to_string()))?;
        match path {
            Some(p) => AliasTable::load(std::path::Path::new(&p)).map_err(|e| CliError::config(e.to_string())),
            None => Ok(dataset::default_aliases().clone()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = (|| {
        let mut resolver = config::Resolver::new(cli.config.as_deref())?;
        match cli.command {
            Command::Graph(a) => setup::run_graph(a, &mut resolver),
            Command::Simulate(a) => simulate::run(a, &mut resolver),
            Command::Analyze(a) => analyze::run(a, &mut resolver),
            Command::Validate(a) => validate::run(a, &mut resolver),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
