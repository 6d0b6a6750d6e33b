//! Per-token log-linear critical-token classifier.
//!
//! Each position is described by sparse binary features (token identity,
//! casing, digits, sentence position, the previous label and a window of
//! left neighbours). Training minimizes the summed negative log-likelihood of
//! the gold labels given their prefixes with full-batch gradient descent.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierMode, CriticalTokenClassifier, CriticalTokenInstance, DecisionLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub mode: ClassifierMode,
    /// Number of left neighbours featurized.
    pub window: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Seeds the initial weight jitter.
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            mode: ClassifierMode::Ct,
            window: 2,
            learning_rate: 1.0,
            epochs: 300,
            l2: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureClassifier {
    mode: ClassifierMode,
    window: usize,
    features: BTreeMap<String, usize>,
    weights: Vec<f64>,
    bias: f64,
    /// Mean training loss before the first and after every epoch.
    loss_history: Vec<f64>,
}

fn shape(token: &str) -> String {
    let mut out = String::new();
    for c in token.chars() {
        let s = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_ascii_digit() {
            'd'
        } else {
            c
        };
        if !out.ends_with(s) {
            out.push(s);
        }
    }
    out
}

fn ends_sentence(token: &str) -> bool {
    token.ends_with(['.', '!', '?'])
}

/// Feature names for predicting the label at `target`, seeing only
/// `visible` (the current token included in CT mode).
fn featurize(visible: &[String], ct: bool, window: usize, prev_label: Option<DecisionLabel>) -> Vec<String> {
    let mut f = Vec::new();
    let n = visible.len();
    let start = n == 0 || (ct && n == 1) || {
        let before = if ct { n.checked_sub(2) } else { n.checked_sub(1) };
        before.is_some_and(|b| ends_sentence(&visible[b]))
    };
    f.push(format!("init={start}"));
    match prev_label {
        Some(l) => f.push(format!("prev={l:?}")),
        None => f.push("prev=<bos>".to_string()),
    }
    let (current, left) = if ct { (visible.last(), &visible[..n.saturating_sub(1)]) } else { (None, visible) };
    if let Some(cur) = current {
        let lower = cur.to_lowercase();
        let has_digit = cur.chars().any(|c| c.is_ascii_digit());
        let cap = cur.chars().find(|c| c.is_alphabetic()).is_some_and(char::is_uppercase);
        f.push(format!("w={lower}"));
        f.push(format!("shape={}", shape(cur)));
        f.push(format!("digit={has_digit}"));
        f.push(format!("cap={cap}"));
        f.push(format!("cap_mid={}", cap && !start));
    }
    for k in 1..=window {
        match left.len().checked_sub(k) {
            Some(j) => {
                f.push(format!("w-{k}={}", left[j].to_lowercase()));
                f.push(format!("shape-{k}={}", shape(&left[j])));
            }
            None => f.push(format!("w-{k}=<bos>")),
        }
    }
    f
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

// -log p(y | x) for a logistic output, computed stably
fn nll(z: f64, y: bool) -> f64 {
    let m = if y { -z } else { z };
    // log(1 + exp(m))
    if m > 0.0 {
        m + libm::log1p(libm::exp(-m))
    } else {
        libm::log1p(libm::exp(m))
    }
}

struct Example {
    active: Vec<usize>,
    y: bool,
}

impl FeatureClassifier {
    /// Trains on every token position of `train`. Errors on an empty set or
    /// when all labels agree.
    pub fn train(train: &[CriticalTokenInstance], config: &FeatureConfig) -> Result<Self> {
        if train.iter().all(|i| i.tokens.is_empty()) {
            return Err(Error::invalid("empty training set"));
        }
        if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        let ct = config.mode == ClassifierMode::Ct;
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut examples = Vec::new();
        for inst in train {
            for i in 0..inst.tokens.len() {
                let visible = &inst.tokens[..if ct { i + 1 } else { i }];
                let prev = i.checked_sub(1).map(|j| inst.labels[j]);
                let active = featurize(visible, ct, config.window, prev)
                    .into_iter()
                    .map(|name| {
                        let next = index.len();
                        *index.entry(name).or_insert(next)
                    })
                    .collect();
                examples.push(Example { active, y: inst.labels[i].is_yes() });
            }
        }
        let yes = examples.iter().filter(|e| e.y).count();
        if yes == 0 || yes == examples.len() {
            return Err(Error::invalid("training labels are all one class"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights: Vec<f64> = (0..index.len()).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
        let mut bias = 0.0;
        let n = examples.len() as f64;
        let loss = |w: &[f64], b: f64| -> f64 {
            let data: f64 = examples
                .iter()
                .map(|e| nll(b + e.active.iter().map(|&k| w[k]).sum::<f64>(), e.y))
                .sum::<f64>()
                / n;
            data + 0.5 * config.l2 * w.iter().map(|x| x * x).sum::<f64>()
        };

        let mut current = loss(&weights, bias);
        let mut history = alloc::vec![current];
        let mut lr = config.learning_rate;
        let mut grad = alloc::vec![0.0; weights.len()];
        for _ in 0..config.epochs {
            grad.iter_mut().zip(&weights).for_each(|(g, w)| *g = config.l2 * w);
            let mut grad_bias = 0.0;
            for e in &examples {
                let z = bias + e.active.iter().map(|&k| weights[k]).sum::<f64>();
                let r = (sigmoid(z) - if e.y { 1.0 } else { 0.0 }) / n;
                grad_bias += r;
                for &k in &e.active {
                    grad[k] += r;
                }
            }
            // halve the step until the loss does not go up
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = weights.iter().zip(&grad).map(|(w, g)| w - lr * g).collect();
                let trial_bias = bias - lr * grad_bias;
                let l = loss(&trial, trial_bias);
                if l <= current {
                    weights = trial;
                    bias = trial_bias;
                    current = l;
                    accepted = true;
                    break;
                }
                lr *= 0.5;
            }
            history.push(current);
            if !accepted {
                break;
            }
        }

        Ok(FeatureClassifier {
            mode: config.mode,
            window: config.window,
            features: index,
            weights,
            bias,
            loss_history: history,
        })
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    fn score(&self, names: &[String]) -> f64 {
        self.bias
            + names
                .iter()
                .filter_map(|n| self.features.get(n))
                .map(|&k| self.weights[k])
                .sum::<f64>()
    }

    /// Probability that the position is critical.
    fn prob_yes(&self, visible: &[String], prev: Option<DecisionLabel>) -> f64 {
        let ct = self.mode == ClassifierMode::Ct;
        sigmoid(self.score(&featurize(visible, ct, self.window, prev)))
    }

    /// Predicts positions `0..len` left to right, feeding each prediction
    /// back as the next position's previous label.
    fn predict_chain(&self, tokens: &[String], len: usize) -> Vec<DecisionLabel> {
        let ct = self.mode == ClassifierMode::Ct;
        let mut out: Vec<DecisionLabel> = Vec::with_capacity(len);
        for i in 0..len {
            let visible = &tokens[..if ct { i + 1 } else { i }];
            let p = self.prob_yes(visible, out.last().copied());
            out.push(DecisionLabel::from_bool(p > 0.5));
        }
        out
    }
}

impl CriticalTokenClassifier for FeatureClassifier {
    fn mode(&self) -> ClassifierMode {
        self.mode
    }

    fn decide(&self, _question: &str, response: &[String]) -> Result<DecisionLabel> {
        let len = match self.mode {
            ClassifierMode::Ct if response.is_empty() => return Ok(DecisionLabel::No),
            ClassifierMode::Ct => response.len(),
            ClassifierMode::Nt => response.len() + 1,
        };
        Ok(*self.predict_chain(response, len).last().expect("len >= 1"))
    }

    fn label_sequence(&self, _question: &str, tokens: &[String]) -> Result<Vec<DecisionLabel>> {
        Ok(self.predict_chain(tokens, tokens.len()))
    }
}
