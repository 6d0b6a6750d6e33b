//! Critical-token classification.
//!
//! A critical token is one whose value should not be left to sampling
//! randomness: numbers, dates, names of people and places, short factual
//! phrases. A classifier looks at the question and the partial response and
//! answers [`DecisionLabel::Yes`] when the position is critical.

mod feature;
mod heuristic;
mod metrics;
mod spans;

pub use feature::{FeatureClassifier, FeatureConfig};
pub use heuristic::{HeuristicClassifier, RuleSet};
pub use metrics::{evaluate_classifier, metrics_from_labels, ClassifierMetrics, Confusion};
pub use spans::{
    map_spans_to_labels, LabeledAnswer, SpanAnnotation, SpanTokenizer, WhitespaceSpans,
};

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionLabel {
    Yes,
    No,
}

impl DecisionLabel {
    pub fn is_yes(self) -> bool {
        self == DecisionLabel::Yes
    }

    pub fn from_bool(yes: bool) -> Self {
        if yes {
            DecisionLabel::Yes
        } else {
            DecisionLabel::No
        }
    }

    pub fn flipped(self) -> Self {
        Self::from_bool(!self.is_yes())
    }
}

/// What a classifier predicts.
///
/// `Ct` judges the current token: the tentative token is the last element of
/// the response it is shown. `Nt` predicts whether the token that comes next
/// will be critical, before that token exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ClassifierMode {
    #[default]
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "NT")]
    Nt,
}

/// One dataset row: a question, the answer tokens and one label per token.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalTokenInstance {
    pub question: String,
    pub tokens: Vec<String>,
    pub labels: Vec<DecisionLabel>,
}

impl CriticalTokenInstance {
    pub fn new(question: String, tokens: Vec<String>, labels: Vec<DecisionLabel>) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        Ok(CriticalTokenInstance { question, tokens, labels })
    }

    pub fn yes_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_yes()).count()
    }
}

/// Routes decoding positions to the knowledge model.
pub trait CriticalTokenClassifier {
    fn mode(&self) -> ClassifierMode;

    /// In CT mode `response` ends with the token under judgment; in NT mode it
    /// is the accepted response so far.
    fn decide(&self, question: &str, response: &[String]) -> Result<DecisionLabel>;

    /// Labels every position of a complete response, one label per token.
    /// Position `i` sees `tokens[..=i]` in CT mode and `tokens[..i]` in NT
    /// mode.
    fn label_sequence(&self, question: &str, tokens: &[String]) -> Result<Vec<DecisionLabel>> {
        let ct = self.mode() == ClassifierMode::Ct;
        (0..tokens.len())
            .map(|i| self.decide(question, &tokens[..if ct { i + 1 } else { i }]))
            .collect()
    }
}

macro_rules! forward_classifier {
    ($($ptr:ty),*) => {$(
        impl<C: CriticalTokenClassifier + ?Sized> CriticalTokenClassifier for $ptr {
            fn mode(&self) -> ClassifierMode {
                (**self).mode()
            }
            fn decide(&self, question: &str, response: &[String]) -> Result<DecisionLabel> {
                (**self).decide(question, response)
            }
            fn label_sequence(&self, question: &str, tokens: &[String]) -> Result<Vec<DecisionLabel>> {
                (**self).label_sequence(question, tokens)
            }
        }
    )*};
}

forward_classifier!(&C, Box<C>, Arc<C>);

/// Always answers the same label.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier {
    pub label: DecisionLabel,
    pub mode: ClassifierMode,
}

impl ConstantClassifier {
    pub fn yes() -> Self {
        ConstantClassifier { label: DecisionLabel::Yes, mode: ClassifierMode::Ct }
    }

    pub fn no() -> Self {
        ConstantClassifier { label: DecisionLabel::No, mode: ClassifierMode::Ct }
    }
}

impl CriticalTokenClassifier for ConstantClassifier {
    fn mode(&self) -> ClassifierMode {
        self.mode
    }

    fn decide(&self, _: &str, _: &[String]) -> Result<DecisionLabel> {
        Ok(self.label)
    }
}

/// Wraps a closure, mostly for oracle routers in experiments.
pub struct FnClassifier<F> {
    mode: ClassifierMode,
    f: F,
}

impl<F> FnClassifier<F>
where
    F: Fn(&str, &[String]) -> DecisionLabel,
{
    pub fn new(mode: ClassifierMode, f: F) -> Self {
        FnClassifier { mode, f }
    }
}

impl<F> CriticalTokenClassifier for FnClassifier<F>
where
    F: Fn(&str, &[String]) -> DecisionLabel,
{
    fn mode(&self) -> ClassifierMode {
        self.mode
    }

    fn decide(&self, question: &str, response: &[String]) -> Result<DecisionLabel> {
        Ok((self.f)(question, response))
    }
}

/// `Question: {question} Answer: {response}` with the partial response
/// joined by single spaces.
pub fn build_classifier_prefix<S: AsRef<str>>(question: &str, response: &[S]) -> String {
    let mut out = format!("Question: {question} Answer: ");
    for (i, t) in response.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn prefix_template() {
        assert_eq!(build_classifier_prefix::<&str>("Who?", &[]), "Question: Who? Answer: ");
        assert_eq!(
            build_classifier_prefix("Who?", &["Mount", "Everest"]),
            "Question: Who? Answer: Mount Everest"
        );
        let toks = ["It", "is", "8,849", "m", "tall,", "in", "Nepal."];
        assert_eq!(
            build_classifier_prefix("How tall is Mount Everest?", &toks),
            "Question: How tall is Mount Everest? Answer: It is 8,849 m tall, in Nepal."
        );
    }

    #[test]
    fn instance_length_check() {
        assert!(CriticalTokenInstance::new("q".into(), vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn default_label_sequence_respects_mode() {
        let seen = |mode| {
            let c = FnClassifier::new(mode, |_: &str, r: &[String]| DecisionLabel::from_bool(r.len() % 2 == 1));
            let toks: Vec<String> = ["a", "b", "c"].iter().map(|s| String::from(*s)).collect();
            c.label_sequence("q", &toks).unwrap()
        };
        use DecisionLabel::*;
        assert_eq!(seen(ClassifierMode::Ct), vec![Yes, No, Yes]);
        assert_eq!(seen(ClassifierMode::Nt), vec![No, Yes, No]);
    }
}
