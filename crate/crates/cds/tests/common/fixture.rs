//! Ten-fact recovery fixture.
//!
//! Asked "Where was Ann born ?", the aligned model answers
//! `Ann was born in <city> . <tail> </s>`. It puts 0.3 on the right city and
//! 0.4 + 0.3 on two wrong ones; the tail is 12 lowercase words drawn
//! uniformly from 4 per position. The pretrained model answers the same
//! sentence deterministically with the right city.

use std::path::{Path, PathBuf};

use cds::formats::LocalModel;
use cds_core::classifier::FnClassifier;
use cds_core::eval::QARecord;
use cds_core::model::TableModel;
use cds_core::{ClassifierMode, DecisionLabel, TokenDistribution, TokenId, Vocabulary};

pub const SUBJECTS: [&str; 10] = ["Ann", "Bob", "Cleo", "Dan", "Eve", "Finn", "Gus", "Hal", "Ida", "Jon"];
pub const CITIES: [&str; 10] = ["Oslo", "Lima", "Rome", "Cairo", "Paris", "Tokyo", "Delhi", "Quito", "Accra", "Hanoi"];
pub const SHOT_SUBJECTS: [&str; 5] = ["Kim", "Lou", "Max", "Ned", "Oto"];
pub const TAIL: usize = 12;
pub const CORRECT_MASS: f64 = 0.3;

const SYL: [&str; TAIL] = ["ba", "de", "fi", "go", "hu", "ke", "ne", "mo", "nu", "pe", "su", "vo"];
const SUF: [&str; 4] = ["tor", "vel", "mun", "zik"];

pub fn tail_word(position: usize, choice: usize) -> String {
    format!("{}{}", SYL[position], SUF[choice])
}

pub fn question(i: usize) -> String {
    format!("Where was {} born ?", SUBJECTS[i])
}

pub fn answer(i: usize) -> String {
    format!("{} was born in {} .", SUBJECTS[i], CITIES[i])
}

pub struct Fixture {
    pub vocab: Vocabulary,
    pub aligned: TableModel,
    pub pretrained: TableModel,
    pub records: Vec<QARecord>,
    pub shots: Vec<(String, String)>,
}

impl Fixture {
    pub fn id(&self, token: &str) -> TokenId {
        self.vocab.id(token).unwrap_or_else(|| panic!("{token:?} not in the fixture vocabulary"))
    }

    pub fn ids(&self, text: &str) -> Vec<TokenId> {
        self.vocab.encode_whitespace(text).unwrap()
    }

    /// The aligned prompt as built by the default template with no system
    /// prompt.
    pub fn prompt(&self, i: usize) -> Vec<TokenId> {
        self.ids(&format!("Question: {}\nAnswer:", question(i)))
    }
}

pub fn fact_fixture() -> Fixture {
    let mut tokens: Vec<String> = ["</s>", "Question:", "Answer:", "Where", "was", "born", "?", "in", "."]
        .iter()
        .map(|s| s.to_string())
        .collect();
    tokens.extend(SUBJECTS.iter().chain(&SHOT_SUBJECTS).chain(&CITIES).map(|s| s.to_string()));
    for j in 0..TAIL {
        for k in 0..SUF.len() {
            tokens.push(tail_word(j, k));
        }
    }
    // recall is a case-insensitive substring test, so no tail word may hide a city
    for t in &tokens[9 + 25..] {
        assert!(!CITIES.iter().any(|c| t.contains(&c.to_lowercase())), "{t}");
    }
    let vocab = Vocabulary::new(tokens, &["</s>"]).unwrap();
    let n = vocab.len();
    let id = |t: &str| vocab.id(t).unwrap();
    let one_hot = |t: &str| TokenDistribution::one_hot(n, id(t)).unwrap();
    let uniform = TokenDistribution::uniform(n).unwrap();

    let mut aligned = TableModel::new(vocab.clone(), uniform.clone()).unwrap();
    let mut pretrained = TableModel::new(vocab.clone(), uniform).unwrap();
    for (i, subj) in SUBJECTS.iter().enumerate() {
        let key: Vec<TokenId> = [*subj, "born", "?", "Answer:"].iter().map(|t| id(t)).collect();
        let lead: Vec<TokenId> = [*subj, "was", "born", "in"].iter().map(|t| id(t)).collect();
        aligned.script(&key, &lead).unwrap();
        let mut fact_key = key.clone();
        fact_key.extend(&lead);
        let facts = aligned
            .sparse(&[(CITIES[i], CORRECT_MASS), (CITIES[(i + 1) % 10], 0.4), (CITIES[(i + 2) % 10], 0.3)])
            .unwrap();
        aligned.insert(fact_key, facts).unwrap();

        let mut full = lead.clone();
        full.extend([id(CITIES[i]), id("."), id("</s>")]);
        pretrained.script(&key, &full).unwrap();
    }
    for city in CITIES {
        aligned.insert(vec![id(city)], one_hot(".")).unwrap();
    }
    let choices = |j: usize| -> Vec<(String, f64)> { (0..SUF.len()).map(|k| (tail_word(j, k), 1.0)).collect() };
    let sparse = |m: &TableModel, w: &[(String, f64)]| {
        let w: Vec<(&str, f64)> = w.iter().map(|(t, p)| (t.as_str(), *p)).collect();
        m.sparse(&w).unwrap()
    };
    let first = sparse(&aligned, &choices(0));
    aligned.insert(vec![id(".")], first).unwrap();
    for j in 0..TAIL {
        for k in 0..SUF.len() {
            let next = if j + 1 < TAIL { sparse(&aligned, &choices(j + 1)) } else { one_hot("</s>") };
            aligned.insert(vec![id(&tail_word(j, k))], next).unwrap();
        }
    }

    let records = (0..10).map(|i| QARecord::new(question(i), vec![CITIES[i].to_string()]).unwrap()).collect();
    let shots = SHOT_SUBJECTS
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("Where was {s} born ?"), format!("{s} was born in {} .", CITIES[(i + 3) % 10])))
        .collect();
    Fixture { vocab, aligned, pretrained, records, shots }
}

fn oracle_rule(_question: &str, response: &[String]) -> DecisionLabel {
    DecisionLabel::from_bool(response.len() >= 2 && response[response.len() - 2] == "in")
}

/// Fires exactly on the city position.
pub fn oracle() -> FnClassifier<fn(&str, &[String]) -> DecisionLabel> {
    FnClassifier::new(ClassifierMode::Ct, oracle_rule as fn(&str, &[String]) -> DecisionLabel)
}

/// Writes models, datasets and a config running `strategy` into `dir`;
/// returns the config path. `extra` is appended to the config verbatim.
pub fn write_fixture(dir: &Path, strategy: &str, extra: &str) -> PathBuf {
    let f = fact_fixture();
    LocalModel::from(f.aligned.clone()).save(&dir.join("aligned.json")).unwrap();
    LocalModel::from(f.pretrained.clone()).save(&dir.join("pretrained.json")).unwrap();
    cds::formats::write_jsonl(&dir.join("facts.jsonl"), &f.records).unwrap();
    let shots: Vec<QARecord> = f.shots.iter().map(|(q, a)| QARecord::new(q.clone(), vec![a.clone()]).unwrap()).collect();
    cds::formats::write_jsonl(&dir.join("shots.jsonl"), &shots).unwrap();
    let config = format!(
        r#"format = "cds-config/1"
seed = 11
parallel = 2
output_dir = "out"
dataset = "facts.jsonl"
dataset_name = "facts"

[strategy]
name = "{strategy}"
max_tokens = 40
gamma_preset = "mistral"

[models.aligned]
path = "aligned.json"

[models.pretrained]
path = "pretrained.json"

[classifier]
kind = "heuristic"

[prompts]
system_preset = "none"
fewshot_file = "shots.jsonl"
shots = 5
{extra}"#
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}
