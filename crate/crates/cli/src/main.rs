mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand};
use temporal_lulc::Level;

use crate::run::CliError;

#[derive(Parser, Debug)]
#[command(name = "temporal-lulc", version, about = "Mono- and multi-temporal land-cover classification")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML or JSON file with the subcommand's settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Ontology level: LEVEL1, LEVEL1_5 or LEVEL2.
    #[arg(long, global = true)]
    pub level: Option<Level>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the synthetic seasonal corpus.
    Synth(commands::SynthArgs),
    /// Validate a manifest, split it and compute channel statistics.
    Ingest(commands::IngestArgs),
    /// Train the single-date encoder and distribution head.
    TrainMono(commands::TrainMonoArgs),
    /// Train the recurrent head over a frozen encoder.
    TrainTemporal(commands::TrainTemporalArgs),
    /// Micro and per-class F1 of a model on a manifest subset.
    Eval(commands::EvalArgs),
    /// Classification map of one tile.
    Map(commands::MapArgs),
    /// Change map between two dates of one tile.
    Change(commands::ChangeArgs),
    /// Side-by-side table of two evaluation reports.
    Compare(commands::CompareArgs),
}

fn clap_failure(e: clap::Error) -> ExitCode {
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            ExitCode::from(if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 })
        }
        ErrorKind::MissingRequiredArgument => {
            let field = match e.get(ContextKind::InvalidArg) {
                Some(ContextValue::Strings(v)) => v.join(", "),
                Some(ContextValue::String(s)) => s.clone(),
                _ => String::new(),
            };
            let field = field.split_whitespace().next().unwrap_or_default().to_string();
            CliError::Config {
                field,
                message: "required flag missing".into(),
            }
            .report()
        }
        ErrorKind::InvalidValue | ErrorKind::ValueValidation => {
            let field = match e.get(ContextKind::InvalidArg) {
                Some(ContextValue::String(s)) => s.split_whitespace().next().unwrap_or_default().to_string(),
                _ => String::new(),
            };
            let message = match e.get(ContextKind::InvalidValue) {
                Some(ContextValue::String(v)) => format!("invalid value `{v}`"),
                _ => e.kind().to_string(),
            };
            CliError::Config { field, message }.report()
        }
        _ => {
            let _ = e.print();
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => return clap_failure(e),
    };
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
