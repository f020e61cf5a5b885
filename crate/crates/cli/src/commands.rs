use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use entailplan::adapters::{build_oracle_suite_for_env, GoldBank, RemoteConfig, RemoteSuite};
use entailplan::dataset::synthetic::{generate, SyntheticConfig};
use entailplan::dataset::{
    build_bank, load_corpus, load_questions, load_trees, read_jsonl, tree_to_proof, write_jsonl,
    QuestionRecord,
};
use entailplan::parallel::{self, Parallelism};
use entailplan::planners::{answer, PlannerKind};
use entailplan::trajectories::{build_bc_dataset, iterate_training_data, Source, TrainingExample};
use entailplan::treemetrics::{evaluate_run, evaluate_tree};
use entailplan::{EntailmentTree, Environment, Fact};
use serde::{Deserialize, Serialize};

use crate::config::{Backend, RunConfig, Settings};
use crate::{Cli, Command, DataArgs, DataMode};

/// One line of an answers file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerLine {
    pub id: String,
    pub chosen_index: usize,
    pub scores: Vec<f64>,
    pub tree_proof_strings: Vec<String>,
    pub trees: Vec<EntailmentTree>,
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let run = cli.settings.over(file).resolve()?;
    let workers = run.workers;
    parallel::with_workers(workers, || dispatch(cli.command, &run))
}

fn dispatch(command: Command, run: &RunConfig) -> Result<()> {
    match command {
        Command::Answer { data, out, trace } => cmd_answer(&data, &out, trace.as_deref(), run),
        Command::Eval {
            data,
            predictions,
            report,
        } => cmd_eval(&data, &predictions, report.as_deref(), run),
        Command::GenData {
            data,
            mode,
            threshold,
            out,
        } => cmd_gen_data(&data, mode, threshold, &out, run),
        Command::Ablate { data, planners, out } => cmd_ablate(&data, &planners, out.as_deref(), run),
        Command::GenSyntheticBank {
            out_dir,
            entries,
            min_depth,
            max_depth,
            options,
            distractors,
            decoys,
            misleading_fraction,
        } => {
            let config = SyntheticConfig {
                entries,
                min_depth,
                max_depth,
                options,
                distractors,
                decoys,
                misleading_fraction,
                seed: run.seed,
            };
            cmd_gen_synthetic_bank(&config, &out_dir)
        }
    }
}

struct Loaded {
    questions: Vec<QuestionRecord>,
    bank: Option<GoldBank>,
    env: Environment,
}

impl Loaded {
    fn bank(&self) -> Result<&GoldBank> {
        self.bank.as_ref().context("this command needs --corpus and --trees")
    }
}

fn load(data: &DataArgs, run: &RunConfig) -> Result<Loaded> {
    let questions = load_questions(&data.questions)?;
    for q in &questions {
        q.check().map_err(|e| anyhow::anyhow!("question `{}`: {e}", q.id))?;
    }
    let corpus: Vec<Fact> = match &data.corpus {
        Some(path) => load_corpus(path)?,
        None => Vec::new(),
    };
    let bank = match &data.trees {
        Some(path) => {
            ensure!(data.corpus.is_some(), "--trees needs --corpus");
            let (bank, report) = build_bank(&questions, &load_trees(path)?, &corpus)?;
            for ex in &report.excluded {
                eprintln!("excluded {}: {}", ex.id, ex.reason);
            }
            Some(bank)
        }
        None => None,
    };
    let suite = match run.backend {
        Backend::Oracle => {
            let Some(bank) = &bank else {
                bail!("the oracle backend needs --corpus and --trees");
            };
            build_oracle_suite_for_env(bank, &corpus, run.noise, run.env)?
        }
        Backend::Remote => {
            let url = run.base_url.clone().context("the remote backend needs --base-url")?;
            RemoteSuite::new(RemoteConfig {
                timeout: run.timeout,
                ..RemoteConfig::new(url)
            })
            .into_suite()
        }
    };
    Ok(Loaded {
        questions,
        bank,
        env: Environment::new(run.env, suite.memoized()),
    })
}

fn mode(run: &RunConfig) -> Parallelism {
    Parallelism::from_workers(run.workers)
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_answer(data: &DataArgs, out: &Path, trace: Option<&Path>, run: &RunConfig) -> Result<()> {
    let loaded = load(data, run)?;
    let answers = parallel::map(&loaded.questions, mode(run), |_, q| {
        answer(&q.question, &q.option_pairs(), &loaded.env, &run.plan, run.planner, Parallelism::Sequential)
            .with_context(|| format!("question `{}`", q.id))
    });
    if let Some(dir) = trace {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut lines = Vec::with_capacity(answers.len());
    let (mut labelled, mut correct) = (0, 0);
    for (q, a) in loaded.questions.iter().zip(answers) {
        let a = a?;
        if let Some(dir) = trace {
            for (i, plan) in a.plans.iter().enumerate() {
                write_json(&dir.join(format!("{}.option{i}.json", file_stem(&q.id))), plan)?;
            }
        }
        if let Some(c) = q.correct_index {
            labelled += 1;
            correct += usize::from(c == a.chosen_index);
        }
        lines.push(AnswerLine {
            id: q.id.clone(),
            chosen_index: a.chosen_index,
            scores: a.options.iter().map(|o| o.score).collect(),
            tree_proof_strings: a.options.iter().map(|o| tree_to_proof(&o.extracted_tree)).collect(),
            trees: a.options.into_iter().map(|o| o.extracted_tree).collect(),
        });
    }
    write_jsonl(out, &lines)?;
    print!("answered {} questions with {}", lines.len(), run.planner);
    if labelled > 0 {
        print!("; accuracy {:.1}% ({correct}/{labelled})", correct as f64 * 100.0 / labelled as f64);
    }
    println!();
    Ok(())
}

fn cmd_eval(data: &DataArgs, predictions: &Path, report_path: Option<&Path>, run: &RunConfig) -> Result<()> {
    let loaded = load(data, run)?;
    let bank = loaded.bank()?;
    let lines: Vec<AnswerLine> = read_jsonl(predictions)?;
    let mut by_id: HashMap<&str, &AnswerLine> = HashMap::new();
    for line in &lines {
        ensure!(
            loaded.questions.iter().any(|q| q.id == line.id),
            "prediction for unknown question `{}`",
            line.id
        );
        ensure!(by_id.insert(&line.id, line).is_none(), "duplicate prediction for `{}`", line.id);
    }
    let mut metrics = Vec::with_capacity(bank.len());
    let mut answers = Vec::with_capacity(bank.len());
    for e in &bank.entries {
        let line = by_id
            .get(e.id.as_str())
            .with_context(|| format!("no prediction for `{}`", e.id))?;
        let pred = line
            .trees
            .get(e.correct_index)
            .with_context(|| format!("prediction for `{}` has no tree for option {}", e.id, e.correct_index))?;
        metrics.push(evaluate_tree(pred, &e.gold, &*loaded.env.adapters.similarity)?);
        answers.push((line.chosen_index, e.correct_index));
    }
    let labels: Vec<_> = bank.entries.iter().map(|e| e.difficulty).collect();
    let split = labels.iter().any(Option::is_some);
    let report = evaluate_run(&metrics, &answers, split.then_some(labels.as_slice()))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    print!("{}", report.table());
    if let Some(path) = report_path {
        write_json(path, &report)?;
    }
    Ok(())
}

fn count_sources(examples: &[TrainingExample]) -> BTreeMap<Source, usize> {
    let mut counts = BTreeMap::new();
    for e in examples {
        *counts.entry(e.source).or_insert(0) += 1;
    }
    counts
}

#[derive(Serialize)]
struct GenSummary {
    mode: &'static str,
    examples: usize,
    by_source: BTreeMap<String, usize>,
    skipped: usize,
    trajectories_included: usize,
    trajectories_excluded: usize,
}

fn cmd_gen_data(data: &DataArgs, mode_flag: DataMode, threshold: f64, out: &Path, run: &RunConfig) -> Result<()> {
    let loaded = load(data, run)?;
    let bank = loaded.bank()?;
    let (examples, skipped, included, excluded, name) = match mode_flag {
        DataMode::Bc => {
            let ds = build_bc_dataset(bank, &loaded.env, mode(run));
            for s in &ds.skipped {
                eprintln!("skipped {}: {}", s.id, s.reason);
            }
            let n = ds.rollouts.len();
            (ds.examples, ds.skipped.len(), n, 0, "bc")
        }
        DataMode::Iterative => {
            let ds = iterate_training_data(bank, &loaded.env, &run.plan, run.planner, threshold, mode(run))?;
            let included = ds.records.iter().filter(|r| r.included).count();
            let excluded = ds.records.len() - included;
            (ds.examples, 0, included, excluded, "iterative")
        }
    };
    write_jsonl(out, &examples)?;
    let by_source = count_sources(&examples)
        .into_iter()
        .map(|(s, n)| (serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(), n))
        .collect();
    let summary = GenSummary {
        mode: name,
        examples: examples.len(),
        by_source,
        skipped,
        trajectories_included: included,
        trajectories_excluded: excluded,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    planner: PlannerKind,
    correct: usize,
    n: usize,
    accuracy: f64,
    mean_actions: f64,
}

fn cmd_ablate(data: &DataArgs, planners: &[PlannerKind], out: Option<&Path>, run: &RunConfig) -> Result<()> {
    let loaded = load(data, run)?;
    let bank = loaded.bank()?;
    ensure!(!bank.is_empty(), "the bank has no usable entries");
    let mut rows = Vec::new();
    for &kind in planners {
        let answers = parallel::map(&bank.entries, mode(run), |_, e| {
            let pairs: Vec<(String, String)> = e.options.iter().cloned().zip(e.hypotheses.iter().cloned()).collect();
            answer(&e.question, &pairs, &loaded.env, &run.plan, kind, Parallelism::Sequential)
                .with_context(|| format!("{kind} on `{}`", e.id))
        });
        let (mut correct, mut actions, mut plans) = (0, 0u64, 0u64);
        for (e, a) in bank.entries.iter().zip(answers) {
            let a = a?;
            correct += usize::from(a.chosen_index == e.correct_index);
            actions += a.plans.iter().map(|p| u64::from(p.actions_used)).sum::<u64>();
            plans += a.plans.len() as u64;
        }
        rows.push(AblationRow {
            planner: kind,
            correct,
            n: bank.len(),
            accuracy: correct as f64 * 100.0 / bank.len() as f64,
            mean_actions: actions as f64 / plans.max(1) as f64,
        });
    }
    println!("{:<8} {:>9} {:>9} {:>12}", "planner", "accuracy", "correct", "mean_actions");
    for r in &rows {
        println!("{:<8} {:>9.1} {:>5}/{:<3} {:>12.2}", r.planner.as_str(), r.accuracy, r.correct, r.n, r.mean_actions);
    }
    if let Some(path) = out {
        write_json(path, &rows)?;
    }
    Ok(())
}

fn cmd_gen_synthetic_bank(config: &SyntheticConfig, out_dir: &Path) -> Result<()> {
    ensure!(
        config.min_depth >= 1 && config.max_depth >= config.min_depth,
        "need 1 <= min_depth <= max_depth"
    );
    ensure!(config.options >= 2, "need at least two options");
    ensure!(
        (0.0..=1.0).contains(&config.misleading_fraction),
        "misleading_fraction must lie in [0, 1]"
    );
    let bank = generate(config);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_jsonl(&out_dir.join("corpus.jsonl"), &bank.corpus)?;
    write_jsonl(&out_dir.join("questions.jsonl"), &bank.questions)?;
    write_jsonl(&out_dir.join("trees.jsonl"), &bank.trees)?;
    println!(
        "wrote {} questions, {} facts to {}",
        bank.questions.len(),
        bank.corpus.len(),
        out_dir.display()
    );
    Ok(())
}
