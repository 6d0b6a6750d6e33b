use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::classifier::DecisionLabel;
use crate::dist::TokenId;
use crate::error::Error;

/// The classifier's view of a generation: the question plus the response
/// token strings accepted so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierContext {
    pub question: String,
    pub response: Vec<String>,
}

impl ClassifierContext {
    pub fn new(question: impl Into<String>) -> Self {
        ClassifierContext { question: question.into(), response: Vec::new() }
    }
}

/// The three contexts kept in step by the two-model strategies.
///
/// After every accepted token, that token is the last element of all three.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrefixTriple {
    pub pretrained: Vec<TokenId>,
    pub aligned: Vec<TokenId>,
    pub classifier: ClassifierContext,
}

impl PrefixTriple {
    /// Fresh contexts for one question; the classifier starts with an empty
    /// response.
    pub fn new(pretrained: Vec<TokenId>, aligned: Vec<TokenId>, question: impl Into<String>) -> Self {
        PrefixTriple { pretrained, aligned, classifier: ClassifierContext::new(question) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Aligned,
    Pretrained,
    /// Argmax of the aligned/pretrained mixture.
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub position: usize,
    /// Routing decision. Yes means the position was treated as critical.
    pub decision: DecisionLabel,
    pub source: Source,
    /// Entropy in nats of the aligned model's next-token distribution (of the
    /// sole model for single-model strategies); `None` when not computed.
    pub entropy: Option<f64>,
    /// The aligned model's tentative token, when one was sampled.
    pub proposed: Option<TokenId>,
    pub accepted: TokenId,
}

/// Work done during one generation, in forward passes and classifier calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub aligned_calls: usize,
    pub pretrained_calls: usize,
    pub classifier_calls: usize,
    pub aligned_tokens: usize,
    pub pretrained_tokens: usize,
    pub mixture_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub steps: Vec<TraceStep>,
    pub counters: Counters,
}

impl GenerationTrace {
    pub fn critical_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.decision.is_yes()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StopToken,
    MaxTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Accepted tokens, excluding the initial prefix and including the final
    /// STOP token when one was produced. Aligned vocabulary for two-model
    /// strategies.
    pub tokens: Vec<TokenId>,
    pub trace: GenerationTrace,
    pub terminated_by: Termination,
    /// Final contexts of the two-model strategies.
    pub prefixes: Option<PrefixTriple>,
}

impl GenerationResult {
    /// Tokens without the trailing STOP.
    pub fn content(&self) -> &[TokenId] {
        match self.terminated_by {
            Termination::StopToken => &self.tokens[..self.tokens.len() - 1],
            Termination::MaxTokens => &self.tokens,
        }
    }
}

/// A generation that failed part-way, with everything produced before the
/// failing step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeFailure {
    pub error: Error,
    pub tokens: Vec<TokenId>,
    pub trace: GenerationTrace,
}

impl fmt::Display for DecodeFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "generation failed at step {}: {}", self.tokens.len(), self.error)
    }
}

impl core::error::Error for DecodeFailure {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for DecodeFailure {
    fn from(error: Error) -> Self {
        DecodeFailure { error, tokens: Vec::new(), trace: GenerationTrace::default() }
    }
}
