//! `dampwave <command> --config <path> [--out <dir>]`
//!
//! Exit status: 0 on success, 1 on input errors, 2 when a built-in check of
//! the command fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Run;

#[derive(Debug, Parser)]
#[command(name = "dampwave", version, about = "Damped wave spectra and Lyapunov bands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Uniform bounds C± and essential Lyapunov bounds Λ±.
    Lyapunov(Common),
    /// Pencil eigenvalues as CSV plus metadata.
    Spectrum(Common),
    /// Band and strip outliers per window of Re τ.
    Bands(Common),
    /// Eigenvalue count against the Weyl prediction.
    Weyl(Common),
    /// Time evolution, energy trace and energy-balance residual.
    Decay(Common),
    /// Anti-Wick quantization properties on a grid.
    QuantizeCheck(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&Run<'_>) -> anyhow::Result<bool>) = match &cli.command {
        Command::Lyapunov(c) => (c, commands::lyapunov),
        Command::Spectrum(c) => (c, commands::spectrum),
        Command::Bands(c) => (c, commands::bands),
        Command::Weyl(c) => (c, commands::weyl),
        Command::Decay(c) => (c, commands::decay),
        Command::QuantizeCheck(c) => (c, commands::quantize_check),
    };
    let outcome = config::load(&common.config).and_then(|loaded| {
        let out = common.out.clone().unwrap_or_else(|| loaded.config.output.dir.clone());
        run(&Run {
            config: &loaded.config,
            hash: &loaded.hash,
            out: &out,
        })
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
