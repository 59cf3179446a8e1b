//! Dynamic hierarchical Dirichlet process topic model with batch and online
//! collapsed Gibbs inference, a predictive-likelihood abnormality score, and
//! the evaluation tooling around it.

pub mod anomaly;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod features;
pub mod inference;
pub mod synthetic;

pub use corpus::{Corpus, CorpusFormat, Document, HyperParams, Label, Vocabulary};
pub use crf::{CrfState, Mode};
pub use error::{Error, Result};
