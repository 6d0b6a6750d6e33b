use alloc::collections::BTreeSet;
use alloc::format;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::TokenId;
use crate::error::{Error, Result};

/// Entropy threshold (nats) used with Llama 2 model pairs.
pub const GAMMA_LLAMA2: f64 = 0.9;
/// Entropy threshold (nats) used with Mistral model pairs.
pub const GAMMA_MISTRAL: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    AlignedSampling,
    AlignedGreedy,
    PretrainedSampling,
    PretrainedGreedy,
    ModelCds,
    EntropyCds,
    SelfCds,
    SoftMixingCds,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::AlignedSampling,
        Strategy::AlignedGreedy,
        Strategy::PretrainedSampling,
        Strategy::PretrainedGreedy,
        Strategy::ModelCds,
        Strategy::EntropyCds,
        Strategy::SelfCds,
        Strategy::SoftMixingCds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::AlignedSampling => "aligned-sampling",
            Strategy::AlignedGreedy => "aligned-greedy",
            Strategy::PretrainedSampling => "pretrained-sampling",
            Strategy::PretrainedGreedy => "pretrained-greedy",
            Strategy::ModelCds => "model-cds",
            Strategy::EntropyCds => "entropy-cds",
            Strategy::SelfCds => "self-cds",
            Strategy::SoftMixingCds => "soft-mixing-cds",
        }
    }

    pub fn needs_aligned(self) -> bool {
        !matches!(self, Strategy::PretrainedSampling | Strategy::PretrainedGreedy)
    }

    pub fn needs_pretrained(self) -> bool {
        matches!(
            self,
            Strategy::PretrainedSampling
                | Strategy::PretrainedGreedy
                | Strategy::ModelCds
                | Strategy::EntropyCds
                | Strategy::SoftMixingCds
        )
    }

    pub fn needs_classifier(self) -> bool {
        matches!(self, Strategy::ModelCds | Strategy::SoftMixingCds)
    }

    pub fn needs_gamma(self) -> bool {
        matches!(self, Strategy::EntropyCds | Strategy::SelfCds)
    }

    pub fn is_single_model(self) -> bool {
        matches!(
            self,
            Strategy::AlignedSampling
                | Strategy::AlignedGreedy
                | Strategy::PretrainedSampling
                | Strategy::PretrainedGreedy
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm || st.name().replace('-', "") == norm)
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

/// What Model CDS and Soft Mixing do when the aligned model proposes STOP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignedStopPolicy {
    /// The STOP proposal is classified like any other token; a Yes hands the
    /// position to the pretrained model.
    #[default]
    Classify,
    /// A STOP proposal ends generation immediately without consulting the
    /// classifier.
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Sampling temperature for every sampled step.
    pub temperature: f64,
    /// Entropy threshold in nats; required by Entropy CDS and Self-CDS.
    pub gamma: Option<f64>,
    /// Weight of the pretrained distribution in Soft Mixing CDS.
    pub lambda_mix: f64,
    pub max_tokens: usize,
    /// STOP set in the aligned (or sole) model's vocabulary; the vocabulary's
    /// own STOP set when `None`.
    pub stop_ids: Option<BTreeSet<TokenId>>,
    pub seed: u64,
    pub aligned_stop: AlignedStopPolicy,
    /// Allow models with different vocabularies, bridging tokens through
    /// their strings. Experimental.
    pub cross_vocab: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            strategy: Strategy::ModelCds,
            temperature: 1.0,
            gamma: None,
            lambda_mix: 0.5,
            max_tokens: 256,
            stop_ids: None,
            seed: 0,
            aligned_stop: AlignedStopPolicy::Classify,
            cross_vocab: false,
        }
    }
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        StrategyConfig { strategy, ..Default::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda_mix = lambda;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return Err(Error::invalid(format!("lambda_mix {} outside [0, 1]", self.lambda_mix)));
        }
        match self.gamma {
            None if self.strategy.needs_gamma() => {
                Err(Error::invalid(format!("{} requires gamma", self.strategy)))
            }
            Some(g) if g.is_nan() => Err(Error::invalid("gamma is NaN")),
            _ => Ok(()),
        }
    }

    /// Gamma, already validated as present for the strategies that need it.
    pub(crate) fn gamma_or_inf(&self) -> f64 {
        self.gamma.unwrap_or(f64::INFINITY)
    }
}
