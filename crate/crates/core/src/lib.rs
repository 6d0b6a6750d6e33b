//! Collaborative decoding between an aligned model and a pretrained
//! "knowledge" model.
//!
//! The aligned model drives generation. A critical-token classifier looks at
//! every tentative token and, when the token carries factual content (names,
//! numbers, dates), the position is handed to the pretrained model which
//! decodes it greedily. Entropy-routed, self-routed and soft-mixing variants
//! are provided alongside plain greedy and temperature sampling.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the HTTP model
//! client and the command line live in the companion `cds` crate.

#![no_std]
// DecodeFailure carries the partial trace; it is returned once per generation
#![allow(clippy::result_large_err)]
// `!(x > 0.0)` style checks are there to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classifier;
pub mod decoding;
pub mod dist;
mod error;
pub mod eval;
pub mod model;
pub mod text;

pub use error::{Error, Result};

pub use classifier::{
    ClassifierMode, CriticalTokenClassifier, CriticalTokenInstance, DecisionLabel,
};

pub use decoding::{
    cost_report, decode, generate, model_cds, GenerationResult, GenerationTrace, Participants,
    PrefixTriple, Strategy, StrategyConfig,
};
pub use dist::{MixtureWeights, TokenDistribution, TokenId, Vocabulary};
pub use model::LanguageModel;
