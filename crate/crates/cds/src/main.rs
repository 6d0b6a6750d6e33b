use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cds::config::{RunConfig, SharedModel};
use cds::dataset::{Pipeline, Templates};
use cds::experiment::{self, Engine, SummaryRow};
use cds::formats::{self, LocalClassifier};
use cds::{CdsError, CdsResult};
use cds_core::classifier::{evaluate_classifier, ClassifierMetrics, FeatureClassifier, FeatureConfig};
use cds_core::decoding::cost_report;
use cds_core::{ClassifierMode, CriticalTokenClassifier, Strategy};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cds", version, about = "Critical-token collaborative decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one prompt and print the response.
    Generate(GenerateArgs),
    /// Score strategies on a QA dataset and write reports.
    Eval(EvalArgs),
    /// Build a critical-token dataset from documents.
    Dataset(DatasetArgs),
    /// Train or evaluate a critical-token classifier.
    #[command(subcommand)]
    Classifier(ClassifierCommand),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shots: Option<usize>,
    /// Write the step trace as JSONL to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated strategies, or `all` for every configured one.
    #[arg(long)]
    strategy: Option<String>,
    /// Shot count or sweep: `3`, `0..5`, `1,3,5`.
    #[arg(long)]
    shots: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    config: PathBuf,
    /// One document per line.
    #[arg(long)]
    documents: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "CT", alias = "ct")]
    Ct,
    #[value(name = "NT", alias = "nt")]
    Nt,
}

#[derive(Subcommand)]
enum ClassifierCommand {
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "CT")]
        mode: ModeArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        l2: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Eval {
        /// Classifier file, or `heuristic` for the rule-based classifier.
        #[arg(long)]
        classifier: String,
        #[arg(long)]
        test: PathBuf,
    },
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: cds_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Classifier(c) => cmd_classifier(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_generate(a: GenerateArgs) -> CdsResult<()> {
    let cfg = RunConfig::load(&a.config)?;
    let strategy = a.strategy.unwrap_or(cfg.strategy.name);
    let engine = Engine::load(&cfg, &[strategy])?;
    let vocab = engine.output_model(strategy)?.vocabulary().clone();
    let config = cfg.strategy_config(strategy, a.seed.unwrap_or(cfg.seed), &vocab)?;
    let shots = a.shots.unwrap_or(cfg.prompts.shots);
    let (result, charge) = engine.run(&a.prompt, shots, &config)?;
    println!("{}", engine.text(strategy, &result)?);
    if let Some(path) = &a.trace {
        let cost = cost_report(&result.trace, charge);
        formats::write_string(path, &formats::trace_jsonl(&result, &vocab, strategy, cost))?;
    }
    Ok(())
}

/// Strategies named on the command line; `all` keeps those the config can
/// run.
fn select_strategies(cfg: &RunConfig, spec: Option<&str>) -> CdsResult<Vec<Strategy>> {
    match spec {
        None => Ok(vec![cfg.strategy.name]),
        Some("all") => Ok(Strategy::ALL
            .into_iter()
            .filter(|&s| cfg.check_roles(s).is_ok())
            .filter(|s| !s.needs_gamma() || cfg.strategy.gamma.is_some() || cfg.strategy.gamma_preset.is_some())
            .collect()),
        Some(list) => list
            .split(',')
            .map(|s| s.parse::<Strategy>().map_err(|e| CdsError::config(e.to_string())))
            .collect(),
    }
}

fn cmd_eval(a: EvalArgs) -> CdsResult<()> {
    let cfg = RunConfig::load(&a.config)?;
    let strategies = select_strategies(&cfg, a.strategy.as_deref())?;
    let sweep = a.shots.as_deref().map(experiment::parse_shots).transpose()?;
    let dataset_path = cfg.dataset.clone().ok_or_else(|| CdsError::config("no `dataset` configured"))?;
    let dataset = formats::read_qa(&dataset_path)?;
    if dataset.is_empty() {
        return Err(CdsError::config(format!("dataset {} is empty", dataset_path.display())));
    }
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let parallel = a.parallel.unwrap_or(cfg.parallel);
    if parallel == 0 {
        return Err(CdsError::config("--parallel must be at least 1"));
    }
    let seed = a.seed.unwrap_or(cfg.seed);
    let engine = Engine::load(&cfg, &strategies)?;

    let mut rows: Vec<SummaryRow> = Vec::new();
    for &strategy in &strategies {
        let shot_list: Vec<Option<usize>> = match &sweep {
            Some(list) => list.iter().map(|&k| Some(k)).collect(),
            None => vec![None],
        };
        for shots in shot_list {
            let k = shots.unwrap_or(cfg.prompts.shots);
            let (row, items) = experiment::evaluate(&engine, &cfg, &dataset, strategy, k, parallel, seed)?;
            formats::write_jsonl(&experiment::items_path(&out, strategy, shots), &items)?;
            rows.push(row);
        }
    }
    experiment::write_summary(&out, &rows)?;
    print_summary(&rows);
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    println!("{:<22} {:>5} {:>9} {:>8} {:>9} {:>10} {:>6}", "strategy", "shots", "accuracy", "stddev", "critical", "cost", "errors");
    for r in rows {
        let sd = r.stddev.map_or_else(|| "-".into(), |s| format!("{s:.4}"));
        println!(
            "{:<22} {:>5} {:>9.4} {:>8} {:>9.4} {:>10} {:>6}",
            r.strategy.to_string(),
            r.shots,
            r.accuracy,
            sd,
            r.critical_fraction,
            r.cost_total,
            r.errors
        );
    }
}

fn cmd_dataset(a: DatasetArgs) -> CdsResult<()> {
    let cfg = RunConfig::load(&a.config)?;
    let gen = cfg
        .dataset_generation
        .as_ref()
        .ok_or_else(|| CdsError::config("no [dataset_generation] section"))?;
    let documents = formats::read_documents(&a.documents)?;
    if documents.is_empty() {
        log::warn!("{} holds no documents", a.documents.display());
        eprintln!("warning: no documents in {}", a.documents.display());
        formats::write_instances(&a.out, &[])?;
        println!("0 instances written, 0 skipped");
        return Ok(());
    }
    let generator: SharedModel = gen.generator.load()?;
    let extractor: SharedModel = gen.extractor.load()?;
    let pipeline = Pipeline {
        generator: generator.as_ref(),
        extractor: extractor.as_ref(),
        templates: Templates {
            question: gen.question_template.clone(),
            answer: gen.answer_template.clone(),
            extract: gen.extract_template.clone(),
        },
        questions_per_doc: gen.questions_per_doc,
        max_tokens: gen.max_tokens,
    };
    let outcome = pipeline.run(&documents)?;
    formats::write_instances(&a.out, &outcome.instances)?;
    println!(
        "{} instances written, {} skipped, {} unmatched spans",
        outcome.instances.len(),
        outcome.skipped,
        outcome.unmatched_spans
    );
    Ok(())
}

fn cmd_classifier(c: ClassifierCommand) -> CdsResult<()> {
    match c {
        ClassifierCommand::Train { train, out, mode, epochs, lr, window, l2, seed } => {
            let data = formats::read_instances(&train)?;
            let d = FeatureConfig::default();
            let config = FeatureConfig {
                mode: match mode {
                    ModeArg::Ct => ClassifierMode::Ct,
                    ModeArg::Nt => ClassifierMode::Nt,
                },
                window: window.unwrap_or(d.window),
                learning_rate: lr.unwrap_or(d.learning_rate),
                epochs: epochs.unwrap_or(d.epochs),
                l2: l2.unwrap_or(d.l2),
                seed,
            };
            let model = FeatureClassifier::train(&data, &config)?;
            let loss = model.loss_history();
            LocalClassifier::Feature(model.clone()).save(&out)?;
            println!(
                "trained on {} instances, {} features, loss {:.4} -> {:.4}",
                data.len(),
                model.feature_count(),
                loss[0],
                loss[loss.len() - 1]
            );
            Ok(())
        }
        ClassifierCommand::Eval { classifier, test } => {
            let c = if classifier == "heuristic" {
                LocalClassifier::Heuristic(Default::default())
            } else {
                LocalClassifier::load(Path::new(&classifier))?
            };
            let data = formats::read_instances(&test)?;
            let m = evaluate_classifier(&c, &data)?;
            print!("{}", metrics_table(c.mode(), &m));
            Ok(())
        }
    }
}

/// All and Switch columns, Yes-F1 and accuracy in percent.
fn metrics_table(mode: ClassifierMode, m: &ClassifierMetrics) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    let name = match mode {
        ClassifierMode::Ct => "CT",
        ClassifierMode::Nt => "NT",
    };
    format!(
        "{:<6} {:>15} {:>15}\n{:<6} {:>7} {:>7} {:>7} {:>7}\n{:<6} {:>7} {:>7} {:>7} {:>7}\nyes rate {:.2}%\n",
        "",
        "All",
        "Switch",
        "",
        "Yes-F1",
        "Acc",
        "Yes-F1",
        "Acc",
        name,
        pct(Some(m.all_yes_f1)),
        pct(Some(m.all_accuracy)),
        pct(m.switch_yes_f1),
        pct(m.switch_accuracy),
        100.0 * m.yes_rate
    )
}
