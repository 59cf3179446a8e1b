//! `dynhdp`: synthesize, extract, train, score and evaluate from the shell.

mod commands;
mod config;
mod manifest;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{EvalOpts, ExtractOpts, HyperOpts, ScoreOpts, SynthOpts, TrainOpts, TruthScoreOpts};

#[derive(Parser, Debug)]
#[command(name = "dynhdp", version, about = "Dynamic HDP topic model for streaming anomaly detection")]
struct Cli {
    /// TOML config file with global keys and one table per subcommand; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all outputs (created if missing) [default: .]
    #[arg(long, global = true, env = "DYNHDP_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads for training chains and flow extraction [default: all cores]
    #[arg(long, global = true, env = "DYNHDP_THREADS")]
    threads: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a bars benchmark: train.corpus, test.corpus, truth.txt, labels.csv
    Synth(SynthOpts),
    /// Batch Gibbs training: model.snapshot
    Train {
        #[command(flatten)]
        opts: TrainOpts,
        #[command(flatten)]
        hyper: HyperOpts,
    },
    /// Online scoring of a test corpus: scores.csv and model.updated.snapshot
    Score {
        #[command(flatten)]
        opts: ScoreOpts,
        /// Leave the model as trained instead of absorbing each scored document
        #[arg(long)]
        no_update: bool,
    },
    /// ROC and AUC of a scores file: roc.csv, roc.svg
    Eval(EvalOpts),
    /// Motion-word corpus from a directory of PGM frames: frames.corpus
    Extract(ExtractOpts),
    /// Reference scores under the true bars and assignments: truth-scores.csv
    TruthScore(TruthScoreOpts),
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_MODEL_MISMATCH: u8 = 3;
pub const EXIT_EVALUATION: u8 = 4;

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<dynhdp::Error> for CliError {
    fn from(e: dynhdp::Error) -> Self {
        use dynhdp::Error as E;
        let code = match e.kind() {
            E::VocabMismatch { .. } => EXIT_MODEL_MISMATCH,
            E::Internal(_) => 1,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
