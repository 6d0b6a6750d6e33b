//! Generation strategies.
//!
//! Every strategy runs the same outer loop: produce one accepted token per
//! step, append it to every context, stop on a STOP token or at
//! `max_tokens`. They differ in who proposes and who decides:
//!
//! | strategy            | per step                                                            |
//! |---------------------|---------------------------------------------------------------------|
//! | aligned/pretrained  | sample (temperature) or argmax from one model                       |
//! | Model CDS           | aligned samples, classifier routes Yes to the pretrained argmax     |
//! | Entropy CDS         | aligned entropy above `gamma` routes to the pretrained argmax       |
//! | Self-CDS            | aligned entropy above `gamma` switches the aligned model to argmax  |
//! | Soft Mixing CDS     | classifier routes Yes to the argmax of the two-model mixture        |

mod config;
mod cost;
mod strategies;
mod trace;

pub use config::{AlignedStopPolicy, Strategy, StrategyConfig, GAMMA_LLAMA2, GAMMA_MISTRAL};
pub use cost::{cost_report, CostReport};
pub use strategies::{
    decode, entropy_cds, generate, model_cds, self_cds, soft_mixing_cds, Participants,
};
pub use trace::{
    ClassifierContext, Counters, DecodeFailure, GenerationResult, GenerationTrace, PrefixTriple,
    Source, Termination, TraceStep,
};
