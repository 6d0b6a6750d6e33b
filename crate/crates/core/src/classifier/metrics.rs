use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CriticalTokenClassifier, CriticalTokenInstance, DecisionLabel};
use crate::error::{Error, Result};

/// Yes-class confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, gold: DecisionLabel, pred: DecisionLabel) {
        match (gold.is_yes(), pred.is_yes()) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Percent; 0 when there is no Yes in gold or prediction.
    pub fn yes_f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            100.0 * (2 * self.tp) as f64 / denom as f64
        }
    }

    /// Percent; `None` on an empty set.
    pub fn accuracy(&self) -> Option<f64> {
        match self.total() {
            0 => None,
            t => Some(100.0 * (self.tp + self.tn) as f64 / t as f64),
        }
    }
}

/// Token-level metrics on the whole set ("All") and on span beginnings
/// ("Switch": gold Yes preceded by gold No, or at position 0).
///
/// F1 and accuracy are percentages; `yes_rate` is a fraction. Switch metrics
/// are `None` when the test set has no span beginnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub all_yes_f1: f64,
    pub all_accuracy: f64,
    pub switch_yes_f1: Option<f64>,
    pub switch_accuracy: Option<f64>,
    pub yes_rate: f64,
    pub all: Confusion,
    pub switch: Confusion,
}

/// Scores predicted label sequences against gold ones.
pub fn metrics_from_labels(gold: &[Vec<DecisionLabel>], pred: &[Vec<DecisionLabel>]) -> ClassifierMetrics {
    let mut all = Confusion::default();
    let mut switch = Confusion::default();
    for (g, p) in gold.iter().zip(pred) {
        for (i, (&gl, &pl)) in g.iter().zip(p).enumerate() {
            all.add(gl, pl);
            let starts_span = gl.is_yes() && (i == 0 || !g[i - 1].is_yes());
            if starts_span {
                switch.add(gl, pl);
            }
        }
    }
    let switch_accuracy = switch.accuracy();
    ClassifierMetrics {
        all_yes_f1: all.yes_f1(),
        all_accuracy: all.accuracy().unwrap_or(0.0),
        switch_yes_f1: switch_accuracy.map(|_| switch.yes_f1()),
        switch_accuracy,
        yes_rate: if all.total() == 0 {
            0.0
        } else {
            (all.tp + all.fn_) as f64 / all.total() as f64
        },
        all,
        switch,
    }
}

/// Runs `classifier` over every position of every test instance.
pub fn evaluate_classifier<C: CriticalTokenClassifier + ?Sized>(
    classifier: &C,
    test: &[CriticalTokenInstance],
) -> Result<ClassifierMetrics> {
    if test.iter().all(|i| i.tokens.is_empty()) {
        return Err(Error::invalid("empty test set"));
    }
    let gold: Vec<_> = test.iter().map(|i| i.labels.clone()).collect();
    let pred = test
        .iter()
        .map(|i| classifier.label_sequence(&i.question, &i.tokens))
        .collect::<Result<Vec<_>>>()?;
    Ok(metrics_from_labels(&gold, &pred))
}
