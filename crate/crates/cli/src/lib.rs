//! The `ptmaml` pipeline: gen-synthetic → prep → train-relevance → build-tasks → train → eval → report.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::Value;

use ptmaml_core::data::Split;
use ptmaml_core::learner::LossKind;
use ptmaml_core::meta::Mode;

pub use config::{resolve, Overrides, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ptmaml", version, about = "Pseudo-task meta-learning for NL-to-SQL on synthetic data")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Ptmaml,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Ptmaml => Mode::Ptmaml,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Pointer,
    Max,
    Sum,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> LossKind {
        match l {
            LossArg::Pointer => LossKind::Pointer,
            LossArg::Max => LossKind::Max,
            LossArg::Sum => LossKind::Sum,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Dev,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus in the raw benchmark format to the data directory.
    GenSynthetic,
    /// Normalize raw splits, drop uncopyable training examples, fingerprint the result.
    Prep,
    /// Train the query-type classifier used for retrieval.
    TrainRelevance,
    /// Build one pseudo-task per training example.
    BuildTasks,
    Train {
        #[arg(long, value_enum, default_value = "ptmaml")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "sum")]
        loss: LossArg,
    },
    Eval {
        #[arg(long, value_enum, default_value = "ptmaml")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "sum")]
        loss: LossArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Adapt on retrieved training neighbours before decoding each example.
        #[arg(long, value_enum, default_value = "off")]
        adapt: Switch,
    },
    /// Compare finished runs; optionally against another output directory.
    Report {
        #[arg(long)]
        against: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynthetic => "gen-synthetic",
            Command::Prep => "prep",
            Command::TrainRelevance => "train-relevance",
            Command::BuildTasks => "build-tasks",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Report { .. } => "report",
        }
    }
}

/// Runs one command with an already resolved config. Returns a JSON summary.
pub fn run_with(cfg: &RunConfig, command: &Command) -> Result<Value, CliError> {
    info!("{} seed={} profile={:?}", command.name(), cfg.seed, cfg.profile);
    match command {
        Command::GenSynthetic => commands::gen_synthetic(cfg),
        Command::Prep => commands::prep(cfg),
        Command::TrainRelevance => commands::train_relevance(cfg),
        Command::BuildTasks => commands::build_tasks(cfg),
        Command::Train { mode, loss } => commands::train_cmd(cfg, (*mode).into(), (*loss).into()),
        Command::Eval {
            mode,
            loss,
            split,
            adapt,
        } => {
            let split = match split {
                SplitArg::Dev => Split::Dev,
                SplitArg::Test => Split::Test,
            };
            let m = commands::eval_cmd(cfg, (*mode).into(), (*loss).into(), split, *adapt == Switch::On)?;
            Ok(serde_json::to_value(m).expect("metrics serialize"))
        }
        Command::Report { against } => report::report(&cfg.paths.out, against.as_deref()),
    }
}

pub fn run(cli: &Cli) -> Result<Value, CliError> {
    let cfg = resolve(&cli.overrides)?;
    run_with(&cfg, &cli.command)
}
