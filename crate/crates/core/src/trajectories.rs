//! Training data for the controller: behavior-cloning roll-outs over gold trees and
//! verifier-filtered planner trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::oracle::{reference_action, Reference};
use crate::adapters::GoldBank;
use crate::dataset::Exclusion;
use crate::environment::{new_episode, EnvError, Environment};
use crate::linearize::{linearize_state, LinearizeError};
use crate::parallel::{self, Parallelism};
use crate::planners::{plan, PlanConfig, PlanError, PlannerKind};
use crate::treemetrics::trees_equivalent;
use crate::types::{Action, EntailmentTree, ReasoningState, Trajectory};
use crate::verifier::state_score;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Bc,
    IterativeCorrect,
    IterativeWrong,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    #[serde(rename = "input")]
    pub state_text: String,
    #[serde(rename = "target")]
    pub action_text: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("gold tree unusable: {0}")]
    Oracle(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("roll-out did not end within {0} actions")]
    Runaway(usize),
    #[error("replay diverged at pair {0}")]
    ReplayMismatch(usize),
}

/// Upper bound on behavior-cloning roll-out length.
const MAX_BC_ACTIONS: usize = 256;

/// The behavior-cloning action for `state` given the gold tree.
pub fn oracle_action(
    state: &ReasoningState,
    gold: &EntailmentTree,
    env: &Environment,
) -> Result<Action, TrajectoryError> {
    for leaf in gold.tree.leaves() {
        if gold.text_of(leaf).is_none() {
            return Err(TrajectoryError::Oracle(format!("{leaf} has no text")));
        }
    }
    let reference = Reference::from_tree(gold, 1.0);
    let page_for = |q: &str| state.retrieval_counts.get(q).copied().unwrap_or(0) as usize;
    let retrieve = |q: &str, k: usize, page: usize| env.adapters.retriever.retrieve(q, k, page);
    let (action, _) = reference_action(
        &state.hypothesis,
        &state.premises,
        &reference,
        &env.config,
        &page_for,
        &retrieve,
    )
    .map_err(|source| EnvError::Adapter {
        action: "oracle retrieval".into(),
        source,
    })?;
    Ok(action)
}

/// Re-applies every action from the first state, checking each recorded state along the
/// way. Returns the state after the last action.
pub fn replay(pairs: &[(ReasoningState, Action)], env: &Environment) -> Result<ReasoningState, TrajectoryError> {
    let Some((first, _)) = pairs.first() else {
        return Err(TrajectoryError::ReplayMismatch(0));
    };
    let mut state = first.clone();
    for (i, (recorded, action)) in pairs.iter().enumerate() {
        if *recorded != state {
            return Err(TrajectoryError::ReplayMismatch(i));
        }
        state = env.apply(&state, action)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcRollout {
    pub id: String,
    pub trajectory: Trajectory,
    /// Final tree equals the gold tree up to reference labels.
    pub reproduces_gold: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BcDataset {
    pub examples: Vec<TrainingExample>,
    pub rollouts: Vec<BcRollout>,
    pub skipped: Vec<Exclusion>,
}

fn bc_rollout(
    env: &Environment,
    hypothesis: &str,
    question: &str,
    option: &str,
    gold: &EntailmentTree,
) -> Result<(Trajectory, ReasoningState), TrajectoryError> {
    let mut state = new_episode(hypothesis, question, option);
    let mut pairs = Vec::new();
    loop {
        if pairs.len() >= MAX_BC_ACTIONS {
            return Err(TrajectoryError::Runaway(MAX_BC_ACTIONS));
        }
        let action = oracle_action(&state, gold, env)?;
        let next = env.apply(&state, &action)?;
        pairs.push((state, action));
        state = next;
        if state.is_terminal() {
            break;
        }
    }
    let final_score = state_score(&state, &env.adapters)
        .map_err(EnvError::from)?
        .total;
    Ok((Trajectory { pairs, final_score }, state))
}

fn examples_from(pairs: &[(ReasoningState, Action)], source: Source) -> Result<Vec<TrainingExample>, TrajectoryError> {
    pairs
        .iter()
        .map(|(s, a)| {
            let action = match source {
                Source::IterativeWrong => Action::end(false),
                _ => a.clone(),
            };
            Ok(TrainingExample {
                state_text: linearize_state(s)?,
                action_text: action.to_string(),
                source,
            })
        })
        .collect()
}

/// Rolls the oracle strategy out on the correct option of every entry. Failed entries are
/// skipped and reported.
pub fn build_bc_dataset(bank: &GoldBank, env: &Environment, mode: Parallelism) -> BcDataset {
    let outcomes = parallel::map(&bank.entries, mode, |_, e| {
        let (trajectory, last) = bc_rollout(env, e.hypothesis(), &e.question, &e.options[e.correct_index], &e.gold)?;
        let examples = examples_from(&trajectory.pairs, Source::Bc)?;
        let reproduces_gold = trees_equivalent(&last.entailment_tree(), &e.gold);
        Ok::<_, TrajectoryError>((trajectory, examples, reproduces_gold))
    });
    let mut out = BcDataset::default();
    for (e, outcome) in bank.entries.iter().zip(outcomes) {
        match outcome {
            Ok((trajectory, examples, reproduces_gold)) => {
                out.examples.extend(examples);
                out.rollouts.push(BcRollout {
                    id: e.id.clone(),
                    trajectory,
                    reproduces_gold,
                });
            }
            Err(err) => out.skipped.push(Exclusion {
                id: e.id.clone(),
                reason: err.to_string(),
            }),
        }
    }
    out
}

/// Outcome of one planned option in iterative generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeRecord {
    pub id: String,
    pub option_index: usize,
    pub correct: bool,
    pub final_score: f64,
    pub pairs: usize,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterativeDataset {
    pub examples: Vec<TrainingExample>,
    pub records: Vec<IterativeRecord>,
}

/// Plans every option of every entry. Correct-option trajectories are kept when their final
/// state score exceeds `threshold`; every pair of a wrong-option trajectory becomes an
/// `End: unproved` example.
pub fn iterate_training_data(
    bank: &GoldBank,
    env: &Environment,
    config: &PlanConfig,
    planner: PlannerKind,
    threshold: f64,
    mode: Parallelism,
) -> Result<IterativeDataset, TrajectoryError> {
    let jobs: Vec<(usize, usize)> = bank
        .entries
        .iter()
        .enumerate()
        .flat_map(|(ei, e)| (0..e.options.len()).map(move |o| (ei, o)))
        .collect();
    let outcomes = parallel::map(&jobs, mode, |_, &(ei, o)| {
        let e = &bank.entries[ei];
        let result = plan(planner, &e.hypotheses[o], &e.question, &e.options[o], env, config)?;
        let correct = o == e.correct_index;
        let t = &result.trajectory;
        let included = !correct || t.final_score > threshold;
        let examples = match (correct, included) {
            (true, true) => examples_from(&t.pairs, Source::IterativeCorrect)?,
            (true, false) => Vec::new(),
            (false, _) => examples_from(&t.pairs, Source::IterativeWrong)?,
        };
        let record = IterativeRecord {
            id: e.id.clone(),
            option_index: o,
            correct,
            final_score: t.final_score,
            pairs: t.pairs.len(),
            included,
        };
        Ok::<_, TrajectoryError>((record, examples))
    });
    let mut out = IterativeDataset::default();
    for outcome in outcomes {
        let (record, examples) = outcome?;
        out.records.push(record);
        out.examples.extend(examples);
    }
    Ok(out)
}
