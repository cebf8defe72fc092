//! `queuenet`: stability checks, simulations and patient-queue analysis from
//! TOML run configs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{dispatch, experiment, out_dir, Ctx};
use config::{Loaded, Mode};

#[derive(Parser)]
#[command(name = "queuenet", version, about = "Queueing networks with learning routers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Single seed, overriding the config's `seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "QUEUENET_OUT", hide = true)]
    env_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized stabilizability and the decentralized conditions.
    Check(Common),
    /// Run the discrete-time simulator.
    Simulate(Common),
    /// Aging rates and Nash checks for a fixed strategy profile.
    Patient {
        #[command(flatten)]
        common: Common,
        /// Also simulate the profile and compare T/t with the predicted rates.
        #[arg(long)]
        verify_sim: bool,
    },
    /// Turn a fractional routing into a distribution over disjoint edge sets.
    Decompose(Common),
    /// Run a list of configs.
    Experiment(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common, verify_sim) = match cli.command {
        Command::Check(c) => (Mode::Check, c, false),
        Command::Simulate(c) => (Mode::Simulate, c, false),
        Command::Patient { common, verify_sim } => (Mode::Patient, common, verify_sim),
        Command::Decompose(c) => (Mode::Decompose, c, false),
        Command::Experiment(c) => (Mode::Experiment, c, false),
    };
    let result = Loaded::read(&common.config).and_then(|loaded| {
        let out = out_dir(common.out.as_deref(), &loaded, common.env_out.as_deref());
        let ctx = Ctx { loaded, out, seed: common.seed, verify_sim };
        match mode {
            Mode::Experiment => experiment(&ctx),
            m => dispatch(&ctx, m),
        }
    });
    match result {
        Ok(outcome) => ExitCode::from(outcome as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
