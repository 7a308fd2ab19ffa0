//! `airpath` command-line front end: analytic evaluation, stream building,
//! client simulation and analytic-vs-simulated reports over parameter sweeps.

use std::fmt;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod sweep;

use config::{ExperimentConfig, Opts};

#[derive(Debug, Parser)]
#[command(
    name = "airpath",
    version,
    about = "Broadcast XML index and data over wireless channels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form sizes, tuning and access times, single vs three channels.
    Analytic(Opts),
    /// Write one stream dump file per channel into `--out`.
    Build(Opts),
    /// Simulate clients over the built stream and print mean metrics.
    Simulate(Opts),
    /// Analytic values next to structural counts and simulated means.
    Report(Opts),
    /// Print the stream dump, or the traversal listing with `--listing`.
    Dump(Opts),
}

/// Usage errors exit with 2, everything else with 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::Usage(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Failure::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

type Handler = fn(&ExperimentConfig) -> Result<(), Failure>;

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let (opts, cmd): (&Opts, Handler) = match &cli.command {
        Command::Analytic(o) => (o, commands::analytic),
        Command::Build(o) => (o, commands::build),
        Command::Simulate(o) => (o, commands::simulate),
        Command::Report(o) => (o, commands::report),
        Command::Dump(o) => (o, commands::dump),
    };
    cmd(&ExperimentConfig::resolve(opts)?)
}
