mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use cds::formats::{self, LocalModel};
use cds_core::classifier::HeuristicClassifier;
use common::fixture::{write_fixture, CITIES};
use common::{model_handler, serve};
use serde_json::json;

fn cds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cds")).args(args).output().expect("run cds")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const GOLDEN: &str = "Ann was born in Oslo . bator dezik fivel gozik hutor kevel nemun movel nuvel pemun suvel votor\n";

#[test]
fn generate_golden_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), "model-cds", "");
    let args = ["generate", "--config", path(&config), "--prompt", "Where was Ann born ?", "--seed", "7"];
    let first = cds(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(stdout(&first), GOLDEN);
    let second = cds(&args);
    assert_eq!(first.stdout, second.stdout);

    // same seed, same draws: only the routed city differs from plain sampling
    let sampled = cds(&[&args[..], &["--strategy", "aligned-sampling"]].concat());
    assert_eq!(stdout(&sampled), GOLDEN.replace("Oslo", "Lima"));
}

#[test]
fn generate_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), "model-cds", "");
    let trace = dir.path().join("trace/run.jsonl");
    let o = cds(&["generate", "--config", path(&config), "--prompt", "Where was Eve born ?", "--seed", "3", "--trace", path(&trace)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> =
        std::fs::read_to_string(&trace).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 20);
    assert_eq!(lines[4]["token"], "Paris");
    assert_eq!(lines[4]["decision"], "Yes");
    assert_eq!(lines[4]["source"], "pretrained");
    assert_eq!(lines[18]["token"], "</s>");
    let s = &lines[19]["summary"];
    assert_eq!(s["strategy"], "model-cds");
    assert_eq!(s["terminated_by"], "stop_token");
    assert_eq!(s["classifier_calls"], 19);
    assert_eq!(s["pretrained_calls"], 1);
    // 5 shots of 13 tokens plus the 7-token live question
    assert_eq!(s["cost"]["pretrained_cost"], 1 + 72);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), "model-cds", "");
    std::fs::remove_file(dir.path().join("pretrained.json")).unwrap();
    let o = cds(&["generate", "--config", path(&config), "--prompt", "Where was Ann born ?"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pretrained.json"), "{}", stderr(&o));

    let o = cds(&["generate", "--config", path(&dir.path().join("nope.toml")), "--prompt", "q"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(&config, "format = \"cds-config/2\"\n").unwrap();
    let o = cds(&["generate", "--config", path(&config), "--prompt", "q"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cds-config/1"));
}

#[test]
fn missing_roles_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), "aligned-sampling", "");
    let text = std::fs::read_to_string(&config).unwrap().replace("[classifier]\nkind = \"heuristic\"\n", "");
    std::fs::write(&config, text).unwrap();
    let ok = cds(&["generate", "--config", path(&config), "--prompt", "Where was Ann born ?"]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let o = cds(&["generate", "--config", path(&config), "--prompt", "Where was Ann born ?", "--strategy", "model-cds"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[classifier]"));
}

#[test]
fn unknown_prompt_words_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), "model-cds", "");
    let o = cds(&["generate", "--config", path(&config), "--prompt", "Who painted the Mona Lisa ?"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn eval_strategy_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), "model-cds", "");
    let out = dir.path().join("sweep");
    let o = cds(&["eval", "--config", path(&config), "--strategy", "all", "--out", path(&out), "--parallel", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let header = csv::Reader::from_path(out.join("summary.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["strategy", "dataset", "accuracy", "stddev", "critical_fraction", "cost_total", "shots", "n", "errors"]
    );
    let rows = csv_rows(&out.join("summary.csv"));
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(
        names,
        ["aligned-sampling", "aligned-greedy", "pretrained-sampling", "pretrained-greedy", "model-cds", "entropy-cds", "self-cds", "soft-mixing-cds"]
    );
    let acc = |name: &str| rows.iter().find(|r| &r[0] == name).unwrap()[2].parse::<f64>().unwrap();
    assert_eq!(acc("model-cds"), 1.0);
    assert_eq!(acc("pretrained-greedy"), 1.0);
    // greedy always takes the 0.4 wrong city
    assert_eq!(acc("aligned-greedy"), 0.0);
    for name in names {
        let items = formats::read_jsonl::<serde_json::Value>(&out.join(format!("items-{name}.jsonl"))).unwrap();
        assert_eq!(items.len(), 10);
        assert!(items.iter().enumerate().all(|(i, it)| it["index"] == i));
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 8);

    // thread count does not change results
    let again = dir.path().join("again");
    let o = cds(&["eval", "--config", path(&config), "--strategy", "all", "--out", path(&again), "--parallel", "1"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(out.join("summary.csv")).unwrap(), std::fs::read(again.join("summary.csv")).unwrap());
}

#[test]
fn eval_shot_sweep_has_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), "model-cds", "");
    let o = cds(&["eval", "--config", path(&config), "--shots", "0..5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let rows = csv_rows(&out.join("summary.csv"));
    assert_eq!(rows.len(), 6);
    let shots: Vec<&str> = rows.iter().map(|r| &r[6]).collect();
    assert_eq!(shots, ["0", "1", "2", "3", "4", "5"]);
    for k in 0..=5 {
        assert!(out.join(format!("items-model-cds-shots{k}.jsonl")).exists());
    }
    assert_eq!(stdout(&o).lines().count(), 7);
}

#[test]
fn eval_dataset_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), "model-cds", "");
    let facts = dir.path().join("facts.jsonl");
    std::fs::write(&facts, "").unwrap();
    let o = cds(&["eval", "--config", path(&config)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"));

    std::fs::write(&facts, "{\"question\": \"Where was Ann born ?\", \"answers\": [\"Oslo\"]}\n\n{\"question\": 3}\n").unwrap();
    let o = cds(&["eval", "--config", path(&config)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("facts.jsonl:3:"), "{}", stderr(&o));
}

#[test]
fn eval_records_generation_failures() {
    // a question the aligned vocabulary cannot encode fails only its own item
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), "model-cds", "");
    let facts = dir.path().join("facts.jsonl");
    let mut text = std::fs::read_to_string(&facts).unwrap();
    text.push_str("{\"question\": \"Where was Zed born ?\", \"answers\": [\"Oslo\"]}\n");
    std::fs::write(&facts, text).unwrap();
    let o = cds(&["eval", "--config", path(&config)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let row = &csv_rows(&dir.path().join("out/summary.csv"))[0];
    assert_eq!((&row[2], &row[7], &row[8]), ("1.000000", "10", "1"));
    let items = formats::read_jsonl::<serde_json::Value>(&dir.path().join("out/items-model-cds.jsonl")).unwrap();
    assert!(items[10]["error"].as_str().unwrap().contains("Zed"));
    assert_eq!(items[10]["correct"], serde_json::Value::Null);
}

#[test]
fn served_pretrained_model_matches_local() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture::fact_fixture();
    let server = serve(model_handler(Arc::new(f.pretrained.clone())));
    let config = write_fixture(dir.path(), "model-cds", "");
    let text = std::fs::read_to_string(&config).unwrap().replace(
        "[models.pretrained]\npath = \"pretrained.json\"",
        &format!("[models.pretrained]\nendpoint = \"{}\"\ntimeout_secs = 5", server.url),
    );
    std::fs::write(&config, text).unwrap();
    let o = cds(&["generate", "--config", path(&config), "--prompt", "Where was Ann born ?", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), GOLDEN);
    assert!(server.hits() >= 2);
}

#[test]
fn served_classifier_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let h = HeuristicClassifier::default();
    let server = serve(Box::new(move |_, _, body| {
        let prefix = serde_json::from_str::<serde_json::Value>(body).unwrap()["prefix"].as_str().unwrap().to_string();
        let words: Vec<String> = prefix.split_once(" Answer: ").unwrap().1.split_whitespace().map(String::from).collect();
        let label = if h.label_last(&words).is_yes() { "Yes" } else { "No" };
        (200, json!({ "label": label }).to_string())
    }));
    let config = write_fixture(dir.path(), "model-cds", "");
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("kind = \"heuristic\"", &format!("kind = \"endpoint\"\nendpoint = \"{}\"", server.url));
    std::fs::write(&config, text).unwrap();
    let o = cds(&["generate", "--config", path(&config), "--prompt", "Where was Ann born ?", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), GOLDEN);
    // one decision per generated token
    assert_eq!(server.hits(), 19);
}

fn digit_dataset(path: &Path, n: usize, offset: usize) {
    let words = ["the", "tower", "is", "Eiffel", "tall", "and", "was", "built", "in", "by", "m"];
    let lines: Vec<String> = (0..n)
        .map(|i| {
            let mut tokens = Vec::new();
            let mut labels = Vec::new();
            for j in 0..9 {
                let k = (i * 7 + j * 3 + offset) % 13;
                if k < 3 {
                    tokens.push(format!("{}", 1800 + (i * 31 + j * 17 + offset) % 200));
                    labels.push(1);
                } else {
                    tokens.push(words[k % words.len()].to_string());
                    labels.push(0);
                }
            }
            json!({"question": "How tall?", "tokens": tokens, "labels": labels}).to_string()
        })
        .collect();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn classifier_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = (dir.path().join("train.jsonl"), dir.path().join("test.jsonl"));
    digit_dataset(&train, 60, 0);
    digit_dataset(&test, 40, 5);
    for mode in ["CT", "NT"] {
        let model = dir.path().join(format!("clf-{mode}.json"));
        let o = cds(&["classifier", "train", "--train", path(&train), "--out", path(&model), "--mode", mode, "--seed", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let header: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
        assert_eq!(header["format"], "cds-classifier/1");
        assert_eq!(header["mode"], mode);
        assert_eq!(header["kind"], "feature");
    }
    let o = cds(&["classifier", "eval", "--classifier", path(&dir.path().join("clf-CT.json")), "--test", path(&test)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].contains("All") && lines[0].contains("Switch"));
    let cells: Vec<f64> = lines[2].split_whitespace().skip(1).map(|c| c.parse().unwrap()).collect();
    assert!(lines[2].starts_with("CT"));
    assert!(cells[1] >= 99.0, "{table}");
}

#[test]
fn classifier_eval_constant_no() {
    let dir = tempfile::tempdir().unwrap();
    // 100 tokens, 11 of them Yes
    let lines: Vec<String> = (0..10)
        .map(|i| {
            let labels: Vec<u8> = (0..10).map(|j| u8::from(j == 4 || (i == 0 && j == 5))).collect();
            let tokens: Vec<String> = (0..10).map(|j| format!("w{j}")).collect();
            json!({"question": "q", "tokens": tokens, "labels": labels}).to_string()
        })
        .collect();
    let test = dir.path().join("test.jsonl");
    std::fs::write(&test, lines.join("\n")).unwrap();
    let never = dir.path().join("never.json");
    std::fs::write(
        &never,
        json!({"format": "cds-classifier/1", "mode": "CT", "kind": "heuristic",
               "rules": {"digits": false, "capitalized": false, "continuation": false}})
        .to_string(),
    )
    .unwrap();
    let o = cds(&["classifier", "eval", "--classifier", path(&never), "--test", path(&test)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let row: Vec<&str> = table.lines().nth(2).unwrap().split_whitespace().collect();
    assert_eq!(row, ["CT", "0.00", "89.00", "0.00", "0.00"]);
    assert!(table.contains("yes rate 11.00%"));

    let o = cds(&["classifier", "eval", "--classifier", "heuristic", "--test", path(&test)]);
    assert!(o.status.success());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, json!({"format": "cds-classifier/1", "mode": "NT", "kind": "heuristic", "rules": {}}).to_string()).unwrap();
    let o = cds(&["classifier", "eval", "--classifier", path(&bad), "--test", path(&test)]);
    assert_eq!(o.status.code(), Some(2));
}

fn dataset_fixture(dir: &Path) -> std::path::PathBuf {
    use cds_core::model::TableModel;
    use cds_core::{TokenDistribution, Vocabulary};
    let text = "Document: Everest is 8849 m tall and lies in Nepal . Questions: 1. How tall is Everest ? 2. Where is Everest ? \
                Lima is the capital of Peru . Question: Answer: Spans: [\"8849\", \"Nepal\"] none [\"Nepal\"] Lima";
    let mut tokens: Vec<String> = vec!["</s>".into()];
    for t in text.split_whitespace() {
        if !tokens.iter().any(|x| x == t) {
            tokens.push(t.into());
        }
    }
    let vocab = Vocabulary::new(tokens, &["</s>"]).unwrap();
    let uniform = TokenDistribution::uniform(vocab.len()).unwrap();
    let ids = |s: &str| vocab.encode_whitespace(s).unwrap();
    let eos = |s: &str| {
        let mut v = ids(s);
        v.push(vocab.eos());
        v
    };
    let mut gen = TableModel::new(vocab.clone(), uniform.clone()).unwrap();
    gen.script(&ids("Nepal . Questions:"), &eos("1. How tall is Everest ? 2. Where is Everest ?")).unwrap();
    gen.script(&ids("Peru . Questions:"), &eos("Where is Lima ?")).unwrap();
    gen.script(&ids("tall is Everest ? Answer:"), &eos("Everest is 8849 m tall")).unwrap();
    gen.script(&ids("Where is Everest ? Answer:"), &eos("Everest lies in Nepal")).unwrap();
    gen.script(&ids("is Lima ? Answer:"), &eos("Lima is the capital of Peru")).unwrap();
    let mut ext = TableModel::new(vocab.clone(), uniform).unwrap();
    ext.script(&ids("m tall Spans:"), &eos("[\"8849\", \"Nepal\"]")).unwrap();
    ext.script(&ids("in Nepal Spans:"), &eos("[\"Nepal\"]")).unwrap();
    ext.script(&ids("of Peru Spans:"), &eos("none")).unwrap();
    LocalModel::from(gen).save(&dir.join("gen.json")).unwrap();
    LocalModel::from(ext).save(&dir.join("ext.json")).unwrap();
    std::fs::write(
        dir.join("docs.txt"),
        "Everest is 8849 m tall and lies in Nepal .\n\nLima is the capital of Peru .\n",
    )
    .unwrap();
    let config = dir.join("dataset.toml");
    std::fs::write(
        &config,
        r#"format = "cds-config/1"
strategy = { name = "aligned-greedy" }

[dataset_generation]
generator = { path = "gen.json" }
extractor = { path = "ext.json" }
question_template = "Document: {document} Questions:"
answer_template = "Document: {document} Question: {question} Answer:"
extract_template = "Question: {question} Answer: {answer} Spans:"
questions_per_doc = 5
max_tokens = 32
"#,
    )
    .unwrap();
    config
}

#[test]
fn dataset_pipeline_command() {
    let dir = tempfile::tempdir().unwrap();
    let config = dataset_fixture(dir.path());
    let out = dir.path().join("instances.jsonl");
    let o = cds(&["dataset", "--config", path(&config), "--documents", path(&dir.path().join("docs.txt")), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("2 instances written, 1 skipped"), "{}", stdout(&o));
    let golden = concat!(
        r#"{"question":"How tall is Everest ?","tokens":["Everest","is","8849","m","tall"],"labels":[0,0,1,0,0]}"#,
        "\n",
        r#"{"question":"Where is Everest ?","tokens":["Everest","lies","in","Nepal"],"labels":[0,0,0,1]}"#,
        "\n"
    );
    assert_eq!(std::fs::read_to_string(&out).unwrap(), golden);

    let empty = dir.path().join("none.txt");
    std::fs::write(&empty, "\n  \n").unwrap();
    let out2 = dir.path().join("empty.jsonl");
    let o = cds(&["dataset", "--config", path(&config), "--documents", path(&empty), "--out", path(&out2)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
    assert_eq!(std::fs::read_to_string(&out2).unwrap(), "");

    let o = cds(&["dataset", "--config", path(&config), "--documents", path(&dir.path().join("missing.txt")), "--out", path(&out2)]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn no_city_leaks_into_the_cli_fixture_tail() {
    let f = common::fixture::fact_fixture();
    for t in f.vocab.tokens() {
        if t.chars().all(|c| c.is_ascii_lowercase()) {
            assert!(!CITIES.iter().any(|c| t.contains(&c.to_lowercase())));
        }
    }
}
