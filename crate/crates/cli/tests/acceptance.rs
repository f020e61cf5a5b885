//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{act, facts, Flat, Jaccard, Script};
use entailplan::adapters::{
    build_oracle_suite, AdapterError, AdapterSuite, Controller, Entailment, OracleNoise, ReasoningType,
    Retriever, Similarity, StepVerifier,
};
use entailplan::dataset::synthetic::{generate, SyntheticBank, SyntheticConfig};
use entailplan::parallel::Parallelism;
use entailplan::planners::{
    answer, max_q, mcp_plan, running_update, ucb, ucb_select, EdgeStats, McpPlanner, PlanConfig, PlannerKind,
};
use entailplan::trajectories::{build_bc_dataset, iterate_training_data, replay, Source};
use entailplan::treemetrics::{evaluate_tree, trees_equivalent, TreeMetrics};
use entailplan::verifier::tree_score;
use entailplan::{new_episode, Action, EntailmentTree, EnvConfig, Environment, Fact, PartialTree, SentenceRef, Step};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn oracle_env(bank: &SyntheticBank, noise: OracleNoise) -> Environment {
    let suite = build_oracle_suite(&bank.bank, &bank.corpus, noise).expect("oracle suite").memoized();
    Environment::new(EnvConfig::default(), suite)
}

fn options_of(e: &entailplan::adapters::GoldEntry) -> Vec<(String, String)> {
    e.options.iter().cloned().zip(e.hypotheses.iter().cloned()).collect()
}

fn oracle_exactness() -> Outcome {
    let start = Instant::now();
    let bank = generate(&SyntheticConfig::default());
    check!(bank.bank.len() == 50, "bank has {} entries", bank.bank.len());
    let env = oracle_env(&bank, OracleNoise::default());
    let config = PlanConfig::default();
    let (mut correct, mut overall) = (0, 0.0);
    for e in &bank.bank.entries {
        check!(e.options.len() == 4, "{} has {} options", e.id, e.options.len());
        let a = answer(&e.question, &options_of(e), &env, &config, PlannerKind::Mcp, Parallelism::Sequential)
            .map_err(|err| err.to_string())?;
        correct += usize::from(a.chosen_index == e.correct_index);
        let pred = &a.options[e.correct_index].extracted_tree;
        overall += evaluate_tree(pred, &e.gold, &Jaccard).map_err(|err| err.to_string())?.overall_allcorrect;
    }
    let elapsed = start.elapsed();
    check!(correct == 50, "accuracy {correct}/50");
    check!(overall == 50.0, "overall allcorrect {overall}/50");
    check!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("50/50 correct, overall 100%, {:.1}s", elapsed.as_secs_f64()))
}

const WEAK: &str = "Entail: sent1 & sent2";
const STRONG: &str = "Entail: sent1 & sent3";

fn two_arm_env() -> Environment {
    let quality = HashMap::from([("alpha + beta".to_string(), 0.2), ("alpha + gamma".to_string(), 1.0)]);
    let script = Script {
        facts: facts(&["alpha", "beta", "gamma"]),
        quality,
        propose: Box::new(|text| {
            if text.contains("$proof$ none $context$ none") {
                vec![(act("Retrieve: hypothesis"), 1.0)]
            } else if text.contains("$proof$ none") {
                vec![(act(WEAK), 0.5), (act(STRONG), 0.5)]
            } else {
                vec![(Action::end(true), 1.0)]
            }
        }),
    };
    Environment::new(EnvConfig::default(), script.suite())
}

fn planner_math() -> Outcome {
    let mut a = EdgeStats::new(act("Retrieve: hypothesis"), 0.2);
    (a.q, a.n) = (0.5, 3);
    let b = EdgeStats::new(act("End: proved"), 0.9);
    let (sa, sb) = (ucb(&a, 3, 0.2), ucb(&b, 3, 0.2));
    check!(close(sa, 0.5 + 0.2 * 0.2 * 3f64.sqrt() / 4.0), "first score {sa}");
    check!(close(sb, 0.2 * 0.9 * 3f64.sqrt()), "second score {sb}");
    check!((sa - 0.517).abs() < 5e-4 && (sb - 0.312).abs() < 5e-4, "scores {sa} {sb}");
    check!(ucb_select(&[a, b], 0.2) == Some(0), "selection did not pick the exploited edge");
    let fresh = [
        EdgeStats::new(act("Retrieve: hypothesis"), 0.3),
        EdgeStats::new(act("End: proved"), 0.7),
    ];
    check!(ucb_select(&fresh, 0.2) == Some(1), "unvisited tie not broken by prior");

    let mut e = EdgeStats::new(act("End: proved"), 0.5);
    running_update(&mut e, 0.6);
    running_update(&mut e, 1.0);
    check!(e.q == 0.8 && e.n == 2, "two backups gave q={} n={}", e.q, e.n);

    // Q of the retrieval edge after each simulation, with G the max child Q:
    // V(retrieved) = 0, weak 0.2, weak End 0.2, strong 1.0, strong End 1.0.
    let env = two_arm_env();
    let mut planner =
        McpPlanner::new(&env, PlanConfig::default(), new_episode("h", "q", "o")).map_err(|e| e.to_string())?;
    let expected = [0.0, 0.1, 0.4 / 3.0, 0.35, 0.48];
    for (k, want) in expected.iter().enumerate() {
        planner.simulate().map_err(|e| e.to_string())?;
        let got = planner.nodes[0].edges[0].q;
        check!(close(got, *want), "after simulation {}: q={got}, expected {want}", k + 1);
    }
    check!(planner.nodes[0].closed, "search space not exhausted after five simulations");
    let inner = planner.nodes[0].edges[0].child.expect("retrieval expanded");
    check!(max_q(&planner.nodes[inner].edges) == 1.0, "max child Q is not 1");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut edge = EdgeStats::new(act("End: proved"), 0.5);
    for i in 0..10_000 {
        if i % 97 == 0 {
            edge = EdgeStats::new(act("End: proved"), 0.5);
        }
        running_update(&mut edge, rng.gen_range(0.0..=1.0));
        check!((0.0..=1.0).contains(&edge.q), "fuzz backup {i} left q={}", edge.q);
    }

    let bank = generate(&SyntheticConfig { entries: 10, ..Default::default() });
    let env = oracle_env(&bank, OracleNoise { step_flip_prob: 0.1, ..Default::default() });
    for budget in [1, 7, 30] {
        for e in &bank.bank.entries {
            let root = new_episode(e.hypothesis(), &e.question, &e.options[e.correct_index]);
            let config = PlanConfig { budget, ..Default::default() };
            let mut p = McpPlanner::new(&env, config, root).map_err(|e| e.to_string())?;
            p.run().map_err(|e| e.to_string())?;
            let total: u32 = p.nodes[0].edges.iter().map(|e| e.n).sum();
            check!(total == p.simulations_run(), "{}: root N {} vs {} simulations", e.id, total, p.simulations_run());
        }
    }
    Ok("selection, running average, max backup, 10k fuzz, root visit count".into())
}

fn accounting() -> Outcome {
    let bank = generate(&SyntheticConfig::default());
    let env = oracle_env(&bank, OracleNoise::default());
    let config = PlanConfig::default();
    let (mut sims, mut applies) = (0u64, 0u64);
    let before = env.apply_count();
    for e in &bank.bank.entries {
        for (o, h) in e.hypotheses.iter().enumerate() {
            let r = mcp_plan(h, &e.question, &e.options[o], &env, &config).map_err(|e| e.to_string())?;
            for (k, rec) in r.trace.iter().enumerate() {
                check!(rec.applies == 1, "{} option {o} simulation {k}: {} applies", e.id, rec.applies);
                check!(rec.verifier_calls <= 1, "{} option {o} simulation {k}: {} verifier calls", e.id, rec.verifier_calls);
            }
            sims += r.trace.len() as u64;
            applies += u64::from(r.total_applies());
        }
    }
    let counted = env.apply_count() - before;
    check!(counted == applies && applies == sims, "{sims} simulations, {applies} recorded applies, {counted} counted");
    Ok(format!("{sims} simulations, {counted} applies"))
}

fn ablation() -> Outcome {
    let mut lines = Vec::new();
    let mut passed = 0;
    for seed in 0..3u64 {
        let bank = generate(&SyntheticConfig {
            entries: 200,
            decoys: true,
            misleading_fraction: 0.35,
            seed,
            ..Default::default()
        });
        let env = oracle_env(&bank, OracleNoise { step_flip_prob: 0.1, prior_temperature: None, seed });
        let config = PlanConfig::default();
        let mut acc = HashMap::new();
        for kind in [PlannerKind::Mcp, PlannerKind::Beam, PlannerKind::Greedy] {
            let mut correct = 0;
            for e in &bank.bank.entries {
                let a = answer(&e.question, &options_of(e), &env, &config, kind, Parallelism::Sequential)
                    .map_err(|err| err.to_string())?;
                correct += usize::from(a.chosen_index == e.correct_index);
            }
            acc.insert(kind, correct as f64 * 100.0 / bank.bank.len() as f64);
        }
        let (m, b, g) = (acc[&PlannerKind::Mcp], acc[&PlannerKind::Beam], acc[&PlannerKind::Greedy]);
        let ok = m >= b + 5.0 && m >= g + 5.0;
        passed += usize::from(ok);
        lines.push(format!("seed {seed}: mcp {m:.1} beam {b:.1} greedy {g:.1}"));
    }
    let summary = lines.join("; ");
    check!(passed >= 2, "{passed}/3 seeds show a 5 point margin ({summary})");
    Ok(format!("{passed}/3 seeds; {summary}"))
}

/// Step scores keyed by conclusion (or `premise=>` for single-premise checks); similarity by
/// the first argument.
struct Table {
    steps: HashMap<String, f64>,
    sims: HashMap<String, f64>,
}

impl Controller for Table {
    fn predict(&self, _: &str, _: usize) -> Result<Vec<(Action, f64)>, AdapterError> {
        Ok(Vec::new())
    }
}
impl Retriever for Table {
    fn retrieve(&self, _: &str, _: usize, _: usize) -> Result<Vec<Fact>, AdapterError> {
        Ok(Vec::new())
    }
}
impl Entailment for Table {
    fn generate(&self, _: &[String], _: &str, _: ReasoningType) -> Result<String, AdapterError> {
        Ok(String::new())
    }
}
impl StepVerifier for Table {
    fn score(&self, p: &[String], c: &str) -> Result<f64, AdapterError> {
        let key = if p.len() == 1 { format!("{}=>", p[0]) } else { c.to_string() };
        Ok(self.steps.get(&key).copied().unwrap_or(0.0))
    }
}
impl Similarity for Table {
    fn score(&self, a: &str, _: &str) -> Result<f64, AdapterError> {
        Ok(self.sims.get(a).copied().unwrap_or(0.0))
    }
}

fn table(steps: &[(&str, f64)], sims: &[(&str, f64)]) -> AdapterSuite {
    let t = Arc::new(Table {
        steps: steps.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        sims: sims.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    });
    AdapterSuite::new(t.clone(), t.clone(), t.clone(), t.clone(), t)
}

fn s(i: u32) -> SentenceRef {
    SentenceRef::sent(i)
}
fn i(k: u32) -> SentenceRef {
    SentenceRef::int(k)
}

fn tree(steps: Vec<Step>, leaves: &[(u32, &str)]) -> EntailmentTree {
    EntailmentTree {
        tree: PartialTree::new(steps).expect("valid fixture"),
        leaf_texts: leaves.iter().map(|(k, t)| (s(*k), t.to_string())).collect(),
    }
}

fn verifier_formulas() -> Outcome {
    let leaves = [(1, "w"), (2, "x"), (3, "y"), (4, "z")];
    let chain = tree(
        vec![Step::new(vec![s(1), s(2)], i(1), "a"), Step::new(vec![s(3), i(1)], i(2), "b")],
        &leaves,
    );
    let a = table(&[("a", 0.6), ("b", 1.0), ("b=>", 0.6)], &[("b", 0.8)]);
    let sc = tree_score(&chain.tree, &chain, "h", &a).map_err(|e| e.to_string())?;
    check!(close(sc.valid, 0.8), "validity {}", sc.valid);
    check!(close(sc.faithful, 0.7), "faithfulness {}", sc.faithful);
    check!(close(sc.total, 0.75), "state score {}", sc.total);

    let empty = EntailmentTree::default();
    let sc = tree_score(&empty.tree, &empty, "h", &a).map_err(|e| e.to_string())?;
    check!(sc.total == 0.0 && sc.valid == 0.0 && sc.faithful == 0.0, "empty tree scored {}", sc.total);

    let forest = tree(
        vec![Step::new(vec![s(1), s(2)], i(1), "r1"), Step::new(vec![s(3), s(4)], i(2), "r2")],
        &leaves,
    );
    let a = table(
        &[("r1", 1.0), ("r2", 1.0), ("r1=>", 0.7), ("r2=>", 0.2)],
        &[("r1", 0.9), ("r2", 0.4)],
    );
    let sc = tree_score(&forest.tree, &forest, "h", &a).map_err(|e| e.to_string())?;
    check!(close(sc.faithful, 0.8), "multi-root faithfulness {}", sc.faithful);
    check!(sc.best_root == Some(i(1)), "best root {:?}", sc.best_root);
    check!(close(sc.total, 0.9), "multi-root state score {}", sc.total);
    Ok("mean validity, root faithfulness, empty tree, multi-root max".into())
}

fn metrics(pred: &EntailmentTree, gold: &EntailmentTree, sim: &dyn Similarity) -> Result<TreeMetrics, String> {
    evaluate_tree(pred, gold, sim).map_err(|e| e.to_string())
}

fn expect(name: &str, got: TreeMetrics, want: [f64; 7]) -> Result<(), String> {
    let have = [
        got.leaves_f1,
        got.leaves_allcorrect,
        got.steps_f1,
        got.steps_allcorrect,
        got.inter_f1,
        got.inter_allcorrect,
        got.overall_allcorrect,
    ];
    check!(
        have.iter().zip(&want).all(|(h, w)| close(*h, *w)),
        "{name}: got {have:?}, expected {want:?}"
    );
    Ok(())
}

fn metrics_suite() -> Outcome {
    let gold = tree(
        vec![Step::new(vec![s(1), s(2)], i(1), "a b"), Step::new(vec![i(1), s(3)], i(2), "a b c")],
        &[(1, "a"), (2, "b"), (3, "c")],
    );
    expect("identical", metrics(&gold, &gold, &Jaccard)?, [1.0; 7])?;

    let one = tree(vec![Step::new(vec![s(1), s(2)], i(1), "a b")], &[(1, "a"), (2, "b")]);
    let swapped = tree(vec![Step::new(vec![s(1), s(2)], i(1), "a b")], &[(1, "a"), (2, "x")]);
    expect("leaf swap", metrics(&swapped, &one, &Jaccard)?, [0.5, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0])?;

    let restructured = tree(
        vec![Step::new(vec![s(2), s(3)], i(1), "b c"), Step::new(vec![i(1), s(1)], i(2), "a b c")],
        &[(1, "a"), (2, "b"), (3, "c")],
    );
    expect(
        "structure swap",
        metrics(&restructured, &gold, &Jaccard)?,
        [1.0, 1.0, 0.0, 0.0, 2.0 / 3.0, 0.0, 0.0],
    )?;

    let reworded = tree(vec![Step::new(vec![s(1), s(2)], i(1), "other words")], &[(1, "a"), (2, "b")]);
    expect("similarity 0.20", metrics(&reworded, &one, &Flat(0.20))?, [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0])?;
    expect("similarity 0.30", metrics(&reworded, &one, &Flat(0.30))?, [1.0; 7])?;
    Ok("identical, leaf swap, structure swap, 0.20 and 0.30 intermediates".into())
}

fn bc_replay() -> Outcome {
    let bank = generate(&SyntheticConfig { entries: 100, seed: 11, ..Default::default() });
    let env = oracle_env(&bank, OracleNoise::default());
    let ds = build_bc_dataset(&bank.bank, &env, Parallelism::Sequential);
    check!(ds.skipped.is_empty(), "{} entries skipped: {:?}", ds.skipped.len(), ds.skipped.first());
    check!(ds.rollouts.len() == 100, "{} roll-outs", ds.rollouts.len());
    for (r, e) in ds.rollouts.iter().zip(&bank.bank.entries) {
        let last = replay(&r.trajectory.pairs, &env).map_err(|err| format!("{}: {err}", r.id))?;
        check!(trees_equivalent(&last.entailment_tree(), &e.gold), "{} replays to a different tree", r.id);
        check!(r.reproduces_gold, "{} not flagged as reproducing gold", r.id);
    }

    let bank = generate(&SyntheticConfig {
        entries: 40,
        decoys: true,
        misleading_fraction: 0.35,
        seed: 5,
        ..Default::default()
    });
    let env = oracle_env(&bank, OracleNoise { step_flip_prob: 0.1, prior_temperature: None, seed: 5 });
    let it = iterate_training_data(&bank.bank, &env, &PlanConfig::default(), PlannerKind::Mcp, 0.98, Parallelism::Sequential)
        .map_err(|e| e.to_string())?;
    let (mut kept, mut dropped, mut want_correct, mut want_wrong) = (0, 0, 0, 0);
    for r in &it.records {
        if r.correct {
            check!(r.included == (r.final_score > 0.98), "{} option {}: V={} included={}", r.id, r.option_index, r.final_score, r.included);
            if r.included {
                kept += 1;
                want_correct += r.pairs;
            } else {
                dropped += 1;
            }
        } else {
            check!(r.included, "{} wrong option {} excluded", r.id, r.option_index);
            want_wrong += r.pairs;
        }
    }
    let got_correct = it.examples.iter().filter(|x| x.source == Source::IterativeCorrect).count();
    let wrong: Vec<_> = it.examples.iter().filter(|x| x.source == Source::IterativeWrong).collect();
    check!(got_correct == want_correct, "{got_correct} correct-option examples, expected {want_correct}");
    check!(wrong.len() == want_wrong, "{} wrong-option examples, expected {want_wrong}", wrong.len());
    check!(wrong.iter().all(|x| x.action_text == "End: unproved"), "wrong-option target is not End: unproved");
    Ok(format!("100/100 replay to gold; iterative kept {kept}, dropped {dropped} correct-option trajectories"))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_entailplan"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check!(
        out.status.success(),
        "`{}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out.stdout)
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("inside dir").display().to_string();
                files.push((rel, std::fs::read(&path).map_err(|e| e.to_string())?));
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Every command of the CLI, run from `dir` with relative paths so outputs can be compared.
fn full_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let d = |name: &str| name.to_string();
    let common = ["--seed", "4", "--step-flip-prob", "0.1", "--workers", "2"];
    let mut stdout = Vec::new();
    let mut go = |args: &[&str]| -> Result<(), String> {
        let mut all: Vec<&str> = args.to_vec();
        all.extend(common);
        stdout.extend(run_cli(dir, &all)?);
        Ok(())
    };
    let (bank, q, c, t) = (d("bank"), d("bank/questions.jsonl"), d("bank/corpus.jsonl"), d("bank/trees.jsonl"));
    let data = ["--questions", q.as_str(), "--corpus", c.as_str(), "--trees", t.as_str()];
    go(&["gen-synthetic-bank", "--out-dir", &bank, "--entries", "12", "--decoys", "--misleading-fraction", "0.3"])?;
    let (answers, traces, report) = (d("answers.jsonl"), d("traces"), d("report.json"));
    go(&[&["answer"], &data[..], &["--out", &answers, "--trace", &traces]].concat())?;
    go(&[&["eval"], &data[..], &["--predictions", &answers, "--report", &report]].concat())?;
    let (bc, iterative, ablate) = (d("bc.jsonl"), d("iterative.jsonl"), d("ablate.json"));
    go(&[&["gen-data"], &data[..], &["--out", &bc]].concat())?;
    go(&[&["gen-data"], &data[..], &["--mode", "iterative", "--out", &iterative]].concat())?;
    go(&[&["ablate"], &data[..], &["--out", &ablate]].concat())?;
    std::fs::write(dir.join("stdout.txt"), stdout).map_err(|e| e.to_string())?;
    snapshot(dir)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let first = full_run(a.path())?;
    let second = full_run(b.path())?;
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    check!(
        names == second.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        "runs wrote different file sets"
    );
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        check!(x == y, "{name} differs between runs");
    }
    let bytes: usize = first.iter().map(|(_, x)| x.len()).sum();
    Ok(format!("{} files, {bytes} bytes identical", first.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle end-to-end exactness", oracle_exactness),
        ("planner math", planner_math),
        ("one apply per simulation", accounting),
        ("ablation ordering", ablation),
        ("verifier formulas", verifier_formulas),
        ("tree metrics fixtures", metrics_suite),
        ("behavior-cloning replay and iterative filter", bc_replay),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({detail}) [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{secs:.1}s]");
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
