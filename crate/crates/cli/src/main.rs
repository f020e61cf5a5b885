mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use entailplan::adapters::AdapterError;
use entailplan::planners::{PlanError, PlannerKind};
use entailplan::EnvError;

use config::Settings;

#[derive(Debug, Parser)]
#[command(name = "entailplan", version, about = "Answer questions by planning entailment trees")]
struct Cli {
    /// Flat JSON file with default settings
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Questions JSONL
    #[arg(long)]
    questions: PathBuf,
    /// Fact corpus JSONL (required by the oracle backend)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Gold trees JSONL (required by the oracle backend)
    #[arg(long)]
    trees: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataMode {
    Bc,
    Iterative,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan every option of every question and pick an answer
    Answer {
        #[command(flatten)]
        data: DataArgs,
        /// Answers JSONL
        #[arg(long)]
        out: PathBuf,
        /// Directory for one JSON plan trace per option
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score an answers file against the gold trees
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        predictions: PathBuf,
        /// Write the JSON report here as well as to stdout
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Emit controller training examples
    GenData {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "bc")]
        mode: DataMode,
        /// Minimum final state score for correct-option trajectories (iterative mode)
        #[arg(long, default_value_t = 0.98)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several planners on the same bank and compare accuracy
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "mcp,greedy,oaf,beam")]
        planners: Vec<PlannerKind>,
        /// JSON summary
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded synthetic bank (corpus, questions, trees)
    GenSyntheticBank {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        entries: usize,
        #[arg(long, default_value_t = 1)]
        min_depth: usize,
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
        #[arg(long, default_value_t = 4)]
        options: usize,
        #[arg(long, default_value_t = 20)]
        distractors: usize,
        /// Give every wrong option a short plausible derivation
        #[arg(long)]
        decoys: bool,
        #[arg(long, default_value_t = 0.0)]
        misleading_fraction: f64,
    },
}

/// Exit status 2 when an adapter failed anywhere in the chain, 1 otherwise.
fn exit_status(err: &anyhow::Error) -> u8 {
    let adapter = err.chain().any(|c| {
        c.downcast_ref::<AdapterError>().is_some()
            || c.downcast_ref::<PlanError>().is_some_and(PlanError::is_adapter)
            || c.downcast_ref::<EnvError>().is_some_and(EnvError::is_adapter)
    });
    if adapter {
        2
    } else {
        1
    }
}

/// The error chain joined with ": ", skipping causes a transparent wrapper already printed.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_status(&err))
        }
    }
}
