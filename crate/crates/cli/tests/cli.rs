use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entailplan")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct Bank {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Bank {
    fn new(entries: &str) -> Bank {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["gen-synthetic-bank", "--out-dir", root.join("bank").to_str().unwrap(), "--entries", entries]);
        Bank { _dir: dir, root }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    fn data(&self) -> Vec<String> {
        ["questions", "corpus", "trees"]
            .iter()
            .flat_map(|k| [format!("--{k}"), self.path(&format!("bank/{k}.jsonl"))])
            .collect()
    }

    fn run(&self, command: &str, extra: &[&str]) -> Output {
        let data = self.data();
        let mut args: Vec<&str> = vec![command];
        args.extend(data.iter().map(String::as_str));
        args.extend(extra);
        bin(&args)
    }
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn answer_then_eval_is_exact_on_a_clean_bank() {
    let bank = Bank::new("6");
    let answers = bank.path("answers.jsonl");
    let out = bank.run("answer", &["--out", &answers, "--trace", &bank.path("traces")]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy 100.0% (6/6)"));
    assert_eq!(lines(Path::new(&answers)).len(), 6);
    assert_eq!(std::fs::read_dir(bank.path("traces")).unwrap().count(), 24);

    let out = bank.run("eval", &["--predictions", &answers]);
    let text = String::from_utf8(out.stdout).unwrap();
    let json_end = text.find("\nsplit").unwrap();
    let report: Value = serde_json::from_str(&text[..json_end]).unwrap();
    assert_eq!(report["all"]["n"], 6);
    assert_eq!(report["all"]["means"]["overall_allcorrect"], 100.0);
}

#[test]
fn iterative_threshold_above_one_drops_every_correct_trajectory() {
    let bank = Bank::new("3");
    let summary = |threshold: &str| -> Value {
        let out = bank.run("gen-data", &["--mode", "iterative", "--threshold", threshold, "--out", &bank.path("it.jsonl")]);
        assert!(out.status.success());
        serde_json::from_slice(&out.stdout).unwrap()
    };
    let strict = summary("1.01");
    assert_eq!(strict["trajectories_excluded"], 3);
    assert!(strict["by_source"].get("iterative_correct").is_none());
    let loose = summary("0.5");
    assert_eq!(loose["trajectories_excluded"], 0);
    assert!(loose["by_source"]["iterative_correct"].as_u64().unwrap() > 0);
    let written = lines(Path::new(&bank.path("it.jsonl")));
    assert_eq!(written.len() as u64, loose["examples"].as_u64().unwrap());
}

#[test]
fn config_file_is_read_and_flags_win() {
    let bank = Bank::new("2");
    let config = bank.path("config.json");
    std::fs::write(&config, r#"{"planner": "greedy", "budget": 3}"#).unwrap();
    let out = bank.run("answer", &["--config", &config, "--out", &bank.path("a.jsonl")]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("with greedy"));
    let out = bank.run("answer", &["--config", &config, "--planner", "beam", "--out", &bank.path("a.jsonl")]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("with beam"));

    std::fs::write(&config, r#"{"budgett": 3}"#).unwrap();
    let out = bank.run("answer", &["--config", &config, "--out", &bank.path("a.jsonl")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes_separate_input_and_adapter_failures() {
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["answer", "--bogus"]).status.code(), Some(1));

    let missing = bin(&["answer", "--questions", "/nonexistent/q.jsonl", "--out", "/tmp/x"]);
    assert_eq!(missing.status.code(), Some(1));
    let err = String::from_utf8(missing.stderr).unwrap();
    assert!(err.starts_with("error: "), "{err}");

    let bank = Bank::new("1");
    let questions = bank.path("bank/questions.jsonl");
    let unreachable = bin(&[
        "answer",
        "--questions",
        &questions,
        "--out",
        &bank.path("a.jsonl"),
        "--backend",
        "remote",
        "--base-url",
        "http://127.0.0.1:9",
        "--timeout-secs",
        "1",
    ]);
    assert_eq!(unreachable.status.code(), Some(2));
    let err = String::from_utf8(unreachable.stderr).unwrap();
    let first = err.lines().next().unwrap();
    // each cause appears once
    let parts: Vec<&str> = first.split(": ").collect();
    for (k, part) in parts.iter().enumerate() {
        assert!(!parts[k + 1..].contains(part), "{first}");
    }
}

#[test]
fn eval_rejects_predictions_for_unknown_questions() {
    let bank = Bank::new("2");
    let preds = bank.path("p.jsonl");
    std::fs::write(&preds, "{\"id\":\"nope\",\"chosen_index\":0,\"scores\":[],\"tree_proof_strings\":[],\"trees\":[]}\n").unwrap();
    let out = bank.run("eval", &["--predictions", &preds]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown question"));
}
