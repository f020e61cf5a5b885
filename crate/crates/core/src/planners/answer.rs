use serde::{Deserialize, Serialize};

use super::{beam_plan, greedy_plan, mcp_plan, oaf_plan, PlanConfig, PlanError, PlanResult, PlannerKind};
use crate::environment::Environment;
use crate::parallel::{self, Parallelism};
use crate::types::{EntailmentTree, ScoredOption, SCORE_EPS};

pub fn plan(
    kind: PlannerKind,
    hypothesis: &str,
    question: &str,
    option: &str,
    env: &Environment,
    config: &PlanConfig,
) -> Result<PlanResult, PlanError> {
    match kind {
        PlannerKind::Mcp => mcp_plan(hypothesis, question, option, env, config),
        PlannerKind::Greedy => greedy_plan(hypothesis, question, option, env, config),
        PlannerKind::Oaf => oaf_plan(hypothesis, question, option, env, config),
        PlannerKind::Beam => beam_plan(hypothesis, question, option, env, config),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub chosen_index: usize,
    pub options: Vec<ScoredOption>,
    pub plans: Vec<PlanResult>,
}

/// Plans every `(option, hypothesis)` pair and picks the highest option score
/// (lowest index on ties).
pub fn answer(
    question: &str,
    options: &[(String, String)],
    env: &Environment,
    config: &PlanConfig,
    kind: PlannerKind,
    mode: Parallelism,
) -> Result<Answer, PlanError> {
    if options.len() < 2 {
        return Err(PlanError::TooFewOptions(options.len()));
    }
    let outcomes = parallel::map(options, mode, |i, (option, hypothesis)| {
        let result = plan(kind, hypothesis, question, option, env, config)?;
        let extracted_tree = if result.best_state.tree.is_empty() {
            EntailmentTree::default()
        } else {
            env.extract_best_tree(&result.best_state)?
        };
        let scored = ScoredOption {
            option_index: i,
            score: result.option_score,
            best_state: result.best_state.clone(),
            extracted_tree,
        };
        Ok::<_, PlanError>((scored, result))
    });
    let mut scored = Vec::with_capacity(options.len());
    let mut plans = Vec::with_capacity(options.len());
    for outcome in outcomes {
        let (s, p) = outcome?;
        scored.push(s);
        plans.push(p);
    }
    let mut chosen = 0;
    for (i, s) in scored.iter().enumerate() {
        if s.score > scored[chosen].score + SCORE_EPS {
            chosen = i;
        }
    }
    Ok(Answer {
        chosen_index: chosen,
        options: scored,
        plans,
    })
}
