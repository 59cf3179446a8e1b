//! Batch and online collapsed Gibbs sampling, and the model snapshot that
//! carries global statistics from training into streaming inference.

mod batch;
mod joint;
mod online;
mod snapshot;

pub use batch::{batch_train, GibbsChain};
pub use joint::log_joint;
pub use online::{online_infer, sample_document, DocPosterior};
pub use snapshot::{
    format_snapshot, load_snapshot, parse_snapshot, save_snapshot, ModelSnapshot, TrainingMeta, SNAPSHOT_VERSION,
};

use crate::crf::Mode;
use crate::error::{Error, Result};

/// How the dynamic-mode sampler treats the influence of a table's topic on
/// later documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DynamicConditional {
    /// Full conditional of the sequential joint, including the change a topic
    /// choice makes to every later document's topic-draw probabilities.
    #[default]
    Exact,
    /// Current-document weights only, with global counts over the whole corpus.
    Local,
}

impl std::str::FromStr for DynamicConditional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(DynamicConditional::Exact),
            "local" => Ok(DynamicConditional::Local),
            other => Err(Error::InvalidInput(format!("unknown conditional {other:?}"))),
        }
    }
}

/// Sweep budget and chain layout of a Gibbs run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub sample_lag: usize,
    pub chains: usize,
    pub seed: u64,
    pub mode: Mode,
    pub conditional: DynamicConditional,
}

impl GibbsConfig {
    pub fn batch(mode: Mode, seed: u64) -> Self {
        GibbsConfig {
            sweeps: 500,
            burn_in: 100,
            sample_lag: 2,
            chains: 1,
            seed,
            mode,
            conditional: DynamicConditional::Exact,
        }
    }

    /// Defaults for the per-document sampler: 20 samples after 10 burn-in sweeps.
    pub fn online(mode: Mode, seed: u64) -> Self {
        GibbsConfig {
            sweeps: 50,
            burn_in: 10,
            sample_lag: 2,
            chains: 1,
            seed,
            mode,
            conditional: DynamicConditional::Exact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return Err(Error::InvalidConfig(format!(
                "sweeps ({}) must exceed burn_in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if self.sample_lag == 0 {
            return Err(Error::InvalidConfig("sample_lag must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::InvalidConfig("chains must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether the state after 1-based sweep `s` is kept as a sample.
    pub fn is_sample_sweep(&self, s: usize) -> bool {
        s > self.burn_in && (s - self.burn_in).is_multiple_of(self.sample_lag)
    }

    pub fn num_samples(&self) -> usize {
        (self.sweeps - self.burn_in) / self.sample_lag
    }
}
