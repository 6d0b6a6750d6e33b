use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ClassifierMode, CriticalTokenClassifier, DecisionLabel};
use crate::error::Result;

/// Switches for the rule-based router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleSet {
    /// Tokens containing a digit (numbers, years, dates).
    pub digits: bool,
    /// Capitalized tokens that do not start a sentence (names, places).
    pub capitalized: bool,
    /// Connector words directly after a critical token stay critical
    /// ("Bank of America", "Leonardo da Vinci").
    pub continuation: bool,
    pub connectors: Vec<String>,
    /// How many tokens a continuation chain may look back.
    pub max_lookback: usize,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            digits: true,
            capitalized: true,
            continuation: true,
            connectors: ["of", "de", "da", "del", "van", "von", "der", "la", "le", "&"]
                .iter()
                .map(|s| String::from(*s))
                .collect(),
            max_lookback: 3,
        }
    }
}

/// Reference CT classifier built from surface rules. Looks only at the last
/// token and a bounded left context; the question is ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeuristicClassifier {
    pub rules: RuleSet,
}

fn core_of(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

fn ends_sentence(token: &str) -> bool {
    let t = token.trim_end_matches(['"', '\'', ')', ']']);
    if !t.ends_with(['.', '!', '?']) {
        return false;
    }
    // "Mt." "Dr." "St." and initials do not end a sentence
    let word = t.trim_end_matches('.');
    let abbreviation = t.ends_with('.')
        && word.chars().count() <= 3
        && word.chars().next().is_some_and(char::is_uppercase);
    !abbreviation
}

impl HeuristicClassifier {
    pub fn new(rules: RuleSet) -> Self {
        HeuristicClassifier { rules }
    }

    fn label_at(&self, tokens: &[String], i: usize, budget: usize) -> bool {
        let core = core_of(&tokens[i]);
        if core.is_empty() {
            return false;
        }
        if self.rules.digits && core.chars().any(|c| c.is_ascii_digit()) {
            return true;
        }
        let sentence_start = i == 0 || ends_sentence(&tokens[i - 1]);
        if self.rules.capitalized
            && !sentence_start
            && core != "I"
            && core.chars().next().is_some_and(char::is_uppercase)
        {
            return true;
        }
        self.rules.continuation
            && budget > 0
            && i > 0
            && !sentence_start
            && self.rules.connectors.iter().any(|c| c == core)
            && self.label_at(tokens, i - 1, budget - 1)
    }

    /// Label of the last token of `tokens`.
    pub fn label_last(&self, tokens: &[String]) -> DecisionLabel {
        match tokens.len() {
            0 => DecisionLabel::No,
            n => DecisionLabel::from_bool(self.label_at(tokens, n - 1, self.rules.max_lookback)),
        }
    }
}

impl CriticalTokenClassifier for HeuristicClassifier {
    fn mode(&self) -> ClassifierMode {
        ClassifierMode::Ct
    }

    fn decide(&self, _question: &str, response: &[String]) -> Result<DecisionLabel> {
        Ok(self.label_last(response))
    }
}
