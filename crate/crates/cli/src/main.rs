//! `evict`: synthetic corpus, estimation, surrogate and HJB training, policy
//! simulation and sweeps, driven by one JSON config.
//!
//! Exit codes: 0 ok, 1 other failure, 2 config error, 3 missing artifact,
//! 4 numeric failure.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod artifact;
mod commands;
mod config;
mod failure;

use commands::{Ctx, SweepParam};
use config::PipelineConfig;
use failure::Failure;

#[derive(Parser)]
#[command(name = "evict", version = artifact::VERSION, about = "Dispatch planning pipeline for eviction-order enforcement")]
struct Cli {
    /// pipeline config (JSON); every field has a default
    #[arg(short, long, global = true, default_value = "evict.json")]
    config: PathBuf,
    /// artifact directory, overriding `out_dir` in the config
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic order corpus
    Synth,
    /// Re-estimate arrival, cancellation, travel and service parameters from the corpus
    Estimate,
    /// Solve random routing instances and fit the routing-value surrogate
    TrainSurrogate,
    /// Train the value and gradient networks
    TrainHjb {
        /// holding cost ratio; the config's model.h when absent
        #[arg(long)]
        h: Option<f64>,
    },
    /// Simulate the configured policies
    Simulate {
        /// proposed, urgency or threshold; all configured policies when absent
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Gather simulation and sweep results into plot-ready CSVs
    Report,
    /// Simulate over a grid of one parameter
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        /// comma-separated values; the config's sweep grid when absent
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Print the default config
    DefaultConfig,
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Cmd::DefaultConfig = cli.cmd {
        println!("{}", serde_json::to_string_pretty(&PipelineConfig::default())?);
        return Ok(());
    }
    let (cfg, out) = if cli.config.is_file() {
        PipelineConfig::load(&cli.config)?
    } else {
        return Err(Failure::Config(format!(
            "{} not found; write one with `evict default-config > {0}`",
            cli.config.display()
        )));
    };
    let dir = artifact::Dir::create(cli.out.unwrap_or(out))?;
    let ctx = Ctx { cfg, dir };
    match cli.cmd {
        Cmd::Synth => commands::synth(&ctx),
        Cmd::Estimate => commands::estimate(&ctx),
        Cmd::TrainSurrogate => commands::train_surrogate_cmd(&ctx),
        Cmd::TrainHjb { h } => commands::train_hjb_cmd(&ctx, h),
        Cmd::Simulate { policy, h } => commands::simulate(&ctx, policy.as_deref(), h),
        Cmd::Report => commands::report(&ctx),
        Cmd::Sweep { param, values } => commands::sweep(&ctx, param, values),
        Cmd::DefaultConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("evict: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
