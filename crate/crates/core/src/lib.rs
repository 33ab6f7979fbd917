//! Predicts whether visual prompting (VP) or linear probing (LP) transfers
//! better to a dataset, from features extracted with and without prompts.
//!
//! The score is a log-likelihood ratio: the expected LogME evidence of
//! prompted classifier outputs minus the LogME evidence of plain backbone
//! features. Positive scores favour VP, negative scores favour LP.

pub mod error;
pub mod evidence;
pub mod featurestore;
pub mod llr;
pub mod prompts;
pub mod metrics;
pub mod baselines;
pub mod synthetic;

pub use error::{Error, Result};
