//! Answer recall, self-BLEU, bootstrap deviation and experiment aggregation.

mod bleu;
mod bootstrap;

pub use bleu::{sentence_bleu, self_bleu, BLEU_FLOOR};
pub use bootstrap::bootstrap_stddev;

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A question with its acceptable answer strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QARecordRepr")]
pub struct QARecord {
    pub question: String,
    #[serde(rename = "answers")]
    gold_aliases: Vec<String>,
}

#[derive(Deserialize)]
struct QARecordRepr {
    question: String,
    answers: Vec<String>,
}

impl TryFrom<QARecordRepr> for QARecord {
    type Error = Error;

    fn try_from(r: QARecordRepr) -> Result<Self> {
        QARecord::new(r.question, r.answers)
    }
}

impl QARecord {
    pub fn new(question: impl Into<String>, aliases: Vec<String>) -> Result<Self> {
        if aliases.is_empty() {
            return Err(Error::invalid("record has no gold answers"));
        }
        if aliases.iter().any(|a| a.trim().is_empty()) {
            return Err(Error::invalid("blank gold answer"));
        }
        Ok(QARecord { question: question.into(), gold_aliases: aliases })
    }

    pub fn gold_aliases(&self) -> &[String] {
        &self.gold_aliases
    }
}

/// Lowercases and collapses whitespace runs to one space, trimming the ends.
pub fn normalize_answer(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

/// True when some gold alias appears in the response, ignoring case and
/// whitespace differences. Punctuation is kept.
pub fn answer_recall(response: &str, record: &QARecord) -> bool {
    let r = normalize_answer(response);
    record.gold_aliases.iter().any(|a| r.contains(&normalize_answer(a)))
}

/// Accuracy over the items that produced a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean of `per_item`, in [0, 1]; 0 when every item errored.
    pub accuracy: f64,
    /// Number of scored items.
    pub n: usize,
    pub per_item: Vec<bool>,
    pub bootstrap_stddev: Option<f64>,
    /// Items whose generation failed; they are not in `per_item`.
    pub errors: usize,
}

impl EvalReport {
    /// Builds a report from per-item outcomes, `None` marking a failed item.
    pub fn from_outcomes<I: IntoIterator<Item = Option<bool>>>(outcomes: I) -> Self {
        let mut per_item = Vec::new();
        let mut errors = 0;
        for o in outcomes {
            match o {
                Some(ok) => per_item.push(ok),
                None => errors += 1,
            }
        }
        let n = per_item.len();
        let hits = per_item.iter().filter(|&&b| b).count();
        EvalReport {
            accuracy: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
            n,
            per_item,
            bootstrap_stddev: None,
            errors,
        }
    }

    pub fn with_bootstrap<R: rand::Rng + ?Sized>(mut self, iterations: usize, rng: &mut R) -> Result<Self> {
        self.bootstrap_stddev = if self.per_item.is_empty() {
            None
        } else {
            Some(bootstrap_stddev(&self.per_item, iterations, rng)?)
        };
        Ok(self)
    }
}

/// One dataset item after generation and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub index: usize,
    pub question: String,
    pub response: Option<String>,
    pub correct: Option<bool>,
    pub error: Option<String>,
}

impl ItemResult {
    pub fn scored(index: usize, record: &QARecord, response: String) -> Self {
        let correct = answer_recall(&response, record);
        ItemResult {
            index,
            question: record.question.clone(),
            response: Some(response),
            correct: Some(correct),
            error: None,
        }
    }

    pub fn failed(index: usize, record: &QARecord, error: &impl ToString) -> Self {
        ItemResult {
            index,
            question: record.question.clone(),
            response: None,
            correct: None,
            error: Some(error.to_string()),
        }
    }
}

/// Generates one response per record with `respond`, scores answer recall
/// and aggregates. A failing item is recorded and counted, not fatal.
pub fn run_experiment<F>(dataset: &[QARecord], mut respond: F) -> Result<(EvalReport, Vec<ItemResult>)>
where
    F: FnMut(usize, &QARecord) -> Result<String>,
{
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let items: Vec<ItemResult> = dataset
        .iter()
        .enumerate()
        .map(|(i, rec)| match respond(i, rec) {
            Ok(text) => ItemResult::scored(i, rec, text),
            Err(e) => ItemResult::failed(i, rec, &e),
        })
        .collect();
    let report = EvalReport::from_outcomes(items.iter().map(|it| it.correct));
    Ok((report, items))
}
