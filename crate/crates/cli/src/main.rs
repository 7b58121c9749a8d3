//! `contflow`: synthesis, divergence, point-matching and flow experiments
//! driven by JSON configs. Artifacts go to `$CONTFLOW_OUT_DIR` (default
//! `contflow-out`); a JSON summary is printed on success and a JSON error
//! record on failure.

mod commands;
mod config;
mod error;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::commands::Output;
use crate::config::parse_override;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "contflow", version, about = "Continuity-equation control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    config: PathBuf,
    /// Override a top-level scalar field, e.g. `--set epsilon=0.02`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    set: Vec<(String, Value)>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a schedule driving a Gaussian to a target in relative entropy.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate divergences and Pinsker certificates between two densities.
    Divergence {
        #[command(flatten)]
        common: Common,
    },
    /// Match two point clouds exactly or with a minimum-norm control.
    Points {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tail conversion sweep for the superlinear field x log x.
    Xlogx {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
    },
    /// Evaluate the flow map and density of a saved schedule at given points.
    FlowEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        time: Option<f64>,
    },
}

fn with(mut set: Vec<(String, Value)>, flags: &[(&str, Option<Value>)]) -> Vec<(String, Value)> {
    for (k, v) in flags {
        if let Some(v) = v {
            set.push((k.to_string(), v.clone()));
        }
    }
    set
}

type Runner = fn(&Path, &[(String, Value)], &mut Output) -> Result<Value, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let j = |v: Option<f64>| v.map(Value::from);
    let (run, common, set): (Runner, _, _) = match cli.command {
        Command::Synthesize { common, epsilon, horizon, seed } => {
            let flags = [("epsilon", j(epsilon)), ("horizon", j(horizon)), ("seed", seed.map(Value::from))];
            let set = with(common.set, &flags);
            (commands::synthesize_cmd, common.config, set)
        }
        Command::Divergence { common } => (commands::divergence_cmd, common.config, common.set),
        Command::Points { common, seed } => {
            let set = with(common.set, &[("seed", seed.map(Value::from))]);
            (commands::points_cmd, common.config, set)
        }
        Command::Xlogx { common, p, q } => {
            let set = with(common.set, &[("p", j(p)), ("q", j(q))]);
            (commands::xlogx_cmd, common.config, set)
        }
        Command::FlowEval { common, time } => {
            let set = with(common.set, &[("time", j(time))]);
            (commands::flow_eval_cmd, common.config, set)
        }
    };
    let dir = std::env::var_os("CONTFLOW_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("contflow-out"));
    let mut out = Output::new(dir);
    match run(&common, &set, &mut out) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.to_json()).expect("error serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
