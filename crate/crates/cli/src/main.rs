//! `prm`: collect annotated search data, build preference pairs, train and
//! evaluate the reward model, and run guided-inference sweeps.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "prm", version, about = "Step-level reward model pipeline")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Upper bound on worker threads for every parallel stage.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    Rule,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerArg {
    Trained,
    Oracle,
    Random,
    Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Rerank,
    Mcts,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run MCTS-P over every environment and write an annotated dataset.
    Collect {
        #[arg(long)]
        envs: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        judge: Option<JudgeKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build labelled preference pairs from a dataset.
    Pairs {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated evaluation types, or `all`.
        #[arg(long)]
        types: Option<String>,
        /// `W_H,W_OS,W_E,W_TR,W_C`
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the regression head and the gating network.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise accuracy of a scorer on a pair set.
    Eval {
        #[arg(long)]
        pairs: PathBuf,
        /// Model file; required for the trained scorer.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        scorer: ScorerArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pearson correlation between the five dimensions of a dataset.
    Correlate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Success-rate sweeps over N and over dimension masks.
    Guide {
        #[arg(long)]
        envs: PathBuf,
        /// Model file; without it the exact oracle scorer is used.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Comma-separated candidate counts.
        #[arg(long)]
        n: Option<String>,
        /// Comma-separated masks such as `H,OS,H+TR,full`.
        #[arg(long)]
        mask: Option<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Runtime,
    InvalidConfig,
    MissingInput,
    Judge,
}

impl ErrorKind {
    pub fn code(self) -> u8 {
        match self {
            ErrorKind::Runtime => 1,
            ErrorKind::InvalidConfig => 2,
            ErrorKind::MissingInput => 3,
            ErrorKind::Judge => 4,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: ErrorKind,
    pub error: anyhow::Error,
}

pub trait Classify<T> {
    fn kind(self, kind: ErrorKind) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn kind(self, kind: ErrorKind) -> Result<T, Failure> {
        self.map_err(|e| Failure { kind, error: e.into() })
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: ErrorKind,
    code: u8,
    message: &'a str,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = format!("{:#}", f.error).replace('\n', " ");
            let line = ErrorLine {
                error: f.kind,
                code: f.kind.code(),
                message: &message,
            };
            eprintln!("{}", serde_json::to_string(&line).expect("error line serializes"));
            ExitCode::from(f.kind.code())
        }
    }
}
