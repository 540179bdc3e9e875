//! Experiment runner for the wiretap leakage toolkit.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "wiretap", version, about = "Leakage estimation and hash design for wiretap coding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, clap::Args)]
pub struct GlobalArgs {
    /// JSON file of dotted config keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Code name: hamming74, bch:15:5, rep:N, identity:N.
    #[arg(long, global = true)]
    pub code: Option<String>,
    /// Eve's channel, e.g. bsc:0.1 or awgn:snr_db=4.
    #[arg(long, global = true)]
    pub channel: Option<String>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub b: Option<usize>,
    /// oracle, cnbmm, gaussian-club or mine.
    #[arg(long, global = true)]
    pub estimator: Option<String>,
    #[arg(long, global = true)]
    pub uhf: Option<bool>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a WTP1 dataset.
    GenData,
    /// Train a neural estimator; writes trace.jsonl, report.json and model.cnb.
    Train,
    /// vCLUB estimate on a stored dataset.
    Estimate,
    /// Exact leakage and conditional entropy.
    Oracle,
    /// Bob's decoded BER along the sweep axis.
    BerSweep,
    /// Gap correction, initial hash size and leftover-hash bound.
    Bounds,
    /// Closed-loop hash output size search.
    DesignHash,
    /// Leakage along the sweep axis with and without hashing.
    LeakageSweep,
}

impl GlobalArgs {
    pub fn overrides(&self) -> CliResult<Vec<(String, Value)>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Value| out.push((k.to_string(), v));
        if let Some(s) = self.seed {
            push("seed", json!(s));
        }
        if let Some(p) = &self.out {
            push("output", json!(p.display().to_string()));
        }
        if let Some(c) = &self.code {
            push("system.code", json!(c));
        }
        if let Some(c) = &self.channel {
            push("system.channel", json!(c));
        }
        if let Some(k) = self.k {
            push("system.k", json!(k));
        }
        if let Some(b) = self.b {
            push("system.b", json!(b));
        }
        if let Some(e) = &self.estimator {
            push("estimator", json!(e));
        }
        if let Some(u) = self.uhf {
            push("system.uhf", json!(u));
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
            out.push((k.trim().to_string(), config::parse_value(v.trim())));
        }
        Ok(out)
    }
}

pub fn run_command(command: &Command, cfg: &ExperimentConfig) -> CliResult<Value> {
    match command {
        Command::GenData => commands::gen_data(cfg),
        Command::Train => commands::train_cmd(cfg),
        Command::Estimate => commands::estimate(cfg),
        Command::Oracle => commands::oracle(cfg),
        Command::BerSweep => commands::ber_sweep(cfg),
        Command::Bounds => commands::bounds(cfg),
        Command::DesignHash => commands::design_hash(cfg),
        Command::LeakageSweep => commands::leakage_sweep(cfg),
    }
}

pub fn run(cli: &Cli) -> CliResult<Value> {
    let cfg = ExperimentConfig::resolve(cli.global.config.as_deref(), &cli.global.overrides()?)?;
    run_command(&cli.command, &cfg)
}
