//! Test-guided token-tree search for program repair, with beam-search
//! baselines and a memory cost model for them.
//!
//! Modules:
//! - [`model`]: vocabularies, next-token distributions and toy models
//! - [`decode`]: greedy, beam, sequential beam and sampling decoders
//! - [`search`]: the tree search itself
//! - [`reward`]: a small expression language, bug corpora and the pass-ratio reward
//! - [`costmodel`]: analytic and instrumented memory accounting
//! - [`campaign`]: runs an algorithm over a corpus and aggregates reports

pub mod campaign;
pub mod costmodel;
pub mod decode;
pub mod model;
#[cfg(feature = "remote")]
pub mod remote;
pub mod reward;
pub mod search;

pub use costmodel::{MemoryMeter, MemoryModelParams, SimulatedOom};
pub use decode::{
    beam_search, greedy_decode, multiple_sampling, sequential_beam_search, DecodeConfig,
    ScoredSequence,
};
pub use model::{
    ModelError, NgramModel, TableModel, TokenDist, TokenId, TokenModel, UniformModel, Vocab,
};
pub use reward::{evaluate_reward, Bug, BugInstance, RewardReport, Spec, TestCase};
pub use search::{flames_search, FlamesSearch, Policy, SearchConfig, SearchOutcome};
