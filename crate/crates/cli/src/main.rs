//! `mmfsk`: run radar depth imaging experiments from a TOML configuration.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmfsk_core::Error;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "MMFSK_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "mmfsk", version, about = "FSK MIMO radar depth imaging experiments")]
struct Cli {
    /// Experiment configuration (TOML). Built-in defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Output directory. Takes precedence over $MMFSK_OUTPUT_DIR and `output_dir`.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    /// Experiment seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override a configuration field, e.g. `--set scene.z=0.35`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the baseband tensor and write ground-truth geometry.
    Simulate,
    /// Build the depth prior on the radar grid.
    Prior,
    /// Reconstruct depth images from a simulated baseband.
    Reconstruct {
        /// Methods to run (2fsk, mm2fsk, 3fsk, bp); replaces `reconstruct.methods`.
        #[arg(long = "method", value_name = "METHOD")]
        methods: Vec<String>,
        /// Also write the correlation field of each FSK run as FSKC.
        #[arg(long)]
        save_correlation: bool,
    },
    /// Evaluate reconstructed depth images against ground truth.
    Eval,
    /// Run simulate → prior → reconstruct → eval over seeds and aggregate.
    Sweep,
    /// Print the tables of existing evaluation and sweep reports.
    Report,
}

/// 0 success, 1 validation/configuration, 2 I/O or file format, 3 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } | Error::Format { .. } => 2,
                Error::EmptyImage(_) | Error::InsufficientData(_) => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
