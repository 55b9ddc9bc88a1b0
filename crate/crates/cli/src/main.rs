//! Command-line front end: quantization search, kernel verification,
//! resource planning, and paired-rollout export.
//!
//! Exit codes: 0 success, 1 config/input error, 2 domain failure (no
//! passing format, failed verification, infeasible budget).

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rbdq", about = "Quantized rigid-body-dynamics laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Search for the cheapest fixed-point format meeting the tolerances.
    QuantizeSearch(Common),
    /// Run the kernel property suites on the configured robot.
    Verify(Common),
    /// Plan DSP allocation and estimate latency/throughput/control rates.
    Plan(Common),
    /// Export one paired (real vs quantized) closed-loop rollout.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Which deterministic initial state to use.
        #[arg(long, default_value_t = 0)]
        run_index: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, Box<dyn FnOnce(&config::Loaded) -> anyhow::Result<u8>>) =
        match &cli.cmd {
            Cmd::QuantizeSearch(c) => (c, Box::new(commands::cmd_quantize_search)),
            Cmd::Verify(c) => (c, Box::new(commands::cmd_verify)),
            Cmd::Plan(c) => (c, Box::new(commands::cmd_plan)),
            Cmd::Rollout { common, run_index } => {
                let idx = *run_index;
                (common, Box::new(move |l| commands::cmd_rollout(l, idx)))
            }
        };
    let loaded = match config::RunConfig::load(&common.config, common.seed, common.out.clone()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(&loaded) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
