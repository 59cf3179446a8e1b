//! Option structs shared by the command line and the TOML config file.
//! A flag beats an environment variable, which beats the file, which beats
//! the built-in default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Declares an options struct usable both as clap arguments and as a config
/// file section, plus `or`, which fills unset fields from another instance.
macro_rules! options {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident: $ty:ty,)* }) => {
        $(#[$meta])*
        #[derive(clap::Args, Deserialize, Serialize, Debug, Clone, Default, PartialEq)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $(
                $(#[$fmeta])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            pub fn or(self, fallback: Self) -> Self {
                Self { $($field: self.$field.or(fallback.$field),)* }
            }
        }
    };
}

options! {
    /// Model hyperparameters.
    HyperOpts {
        /// Table concentration
        alpha: f64,
        /// Topic concentration
        gamma: f64,
        /// Weight of global table counts in the dynamic topic draw
        delta: f64,
        /// Dirichlet parameter of the topic base measure
        eta: f64,
    }
}

options! {
    /// Options of `synth`.
    SynthOpts {
        /// Grid side; the vocabulary has grid*grid words and 2*grid bar topics
        grid: usize,
        /// Training documents (all normal)
        train_docs: usize,
        /// Test documents
        test_docs: usize,
        /// Shortest document
        min_len: usize,
        /// Longest document
        max_len: usize,
        /// Fraction of test documents made abnormal
        abnormal_fraction: f64,
        /// Topic law of normal documents: hdp or dynamic
        mode: String,
        /// Generation table concentration
        gen_alpha: f64,
        /// Generation topic concentration
        gen_gamma: f64,
        /// Generation global-count weight
        gen_delta: f64,
    }
}

options! {
    /// Options of `train`.
    TrainOpts {
        /// Training corpus
        corpus: PathBuf,
        /// Corpus format: token-list or count-vector
        format: String,
        /// Topic law: hdp or dynamic
        mode: String,
        /// Dynamic-mode conditional: exact or local
        conditional: String,
        sweeps: usize,
        burn_in: usize,
        sample_lag: usize,
        /// Independent chains; the one with the highest log joint is kept
        chains: usize,
    }
}

options! {
    /// Options of `score`.
    ScoreOpts {
        /// Trained snapshot
        snapshot: PathBuf,
        /// Test corpus, scored in document order
        corpus: PathBuf,
        /// Corpus format: token-list or count-vector
        format: String,
        sweeps: usize,
        burn_in: usize,
        sample_lag: usize,
    }
}

options! {
    /// Options of `eval`.
    EvalOpts {
        /// Scores CSV
        scores: PathBuf,
        /// Labels CSV (doc_index,label); defaults to the labels in the scores file
        labels: PathBuf,
    }
}

options! {
    /// Options of `extract`.
    ExtractOpts {
        /// Directory of numbered .pgm frames
        frames: PathBuf,
        /// Cell edge in pixels
        cell_size: usize,
        /// Minimum mean flow magnitude of a cell, in pixels per frame
        threshold: f64,
        /// Flow fields per document
        clip_length: usize,
        /// Flow smoothness weight
        smoothness: f64,
        /// Flow iterations
        iterations: usize,
    }
}

options! {
    /// Options of `truth-score`.
    TruthScoreOpts {
        /// Truth file written by `synth`
        truth: PathBuf,
        /// Corpus holding a contiguous run of the truth's documents
        corpus: PathBuf,
        /// Index in the truth of the corpus's first document; defaults to the training size
        offset: usize,
    }
}

/// Contents of a `--config` file: global keys plus one table per subcommand.
#[derive(Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub hyper: HyperOpts,
    pub synth: SynthOpts,
    pub train: TrainOpts,
    pub score: ScoreOpts,
    pub eval: EvalOpts,
    pub extract: ExtractOpts,
    #[serde(rename = "truth-score")]
    pub truth_score: TruthScoreOpts,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}

/// Returns the value or fails naming the missing option.
pub fn required<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::input(format!("missing required option --{name} (flag or config file)")))
}

pub fn parse_opt<T: std::str::FromStr<Err = dynhdp::Error>>(
    value: Option<&str>,
    default: T,
) -> Result<T, CliError> {
    value.map_or(Ok(default), |v| v.parse().map_err(CliError::from))
}
