//! The `amlnet` command line: config-driven training, evaluation,
//! forecasting and diagnostics, each writing into one run directory.

mod commands;
mod manifest;

use std::path::PathBuf;

use amlnet::model::DecoderKind;
use amlnet::Error;
use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_diagnose, cmd_evaluate, cmd_forecast, cmd_train, load_config, QuantileRecord};
pub use manifest::{sha256_hex, RunManifest, MANIFEST_FILE};

pub const EXIT_OK: u8 = 0;
/// Bad configuration, inputs or contracts.
pub const EXIT_CONFIG: u8 = 2;
/// Non-finite or diverging numbers.
pub const EXIT_NUMERIC: u8 = 3;

pub fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_CONFIG
    }
}

#[derive(Debug, Parser)]
#[command(name = "amlnet", version, about = "Probabilistic multi-horizon forecasting with a distilled non-autoregressive decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML, flat keys).
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory for every artifact.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train all decoders and keep the checkpoint with the best student.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Metric report on the test windows.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated subset of P1,P2,S.
        #[arg(long, value_delimiter = ',', default_value = "P1,P2,S")]
        decoders: Vec<DecoderKind>,
    },
    /// Forecast distributions and quantiles on the test windows.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "S")]
        decoders: Vec<DecoderKind>,
    },
    /// Hidden-state cosine maps, DTW and forecast traces for all decoders.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Runs a parsed command line; errors go to stderr.
pub fn run(cli: Cli) -> u8 {
    let result = match &cli.command {
        Command::Train { common } => cmd_train(&common.config, &common.out, common.seed),
        Command::Evaluate {
            common,
            checkpoint,
            decoders,
        } => cmd_evaluate(checkpoint, &common.config, &common.out, decoders, common.seed).map(|_| ()),
        Command::Forecast {
            common,
            checkpoint,
            decoders,
        } => cmd_forecast(checkpoint, &common.config, &common.out, decoders, common.seed),
        Command::Diagnose { common, checkpoint } => {
            cmd_diagnose(checkpoint, &common.config, &common.out, common.seed)
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("amlnet: {e}");
            exit_code(&e)
        }
    }
}
