use super::{
    end_proved_prior, max_prior, propose, PlanConfig, PlanError, PlanResult, PlannerKind,
    SimulationRecord,
};
use crate::environment::{new_episode, EnvError, Environment};
use crate::types::{Action, ReasoningState, Trajectory, SCORE_EPS};
use crate::verifier::{state_score, StateScore};

fn record(path: &[(ReasoningState, Action)]) -> SimulationRecord {
    SimulationRecord {
        path: path.iter().map(|(_, a)| a.to_string()).collect(),
        expanded: None,
        value: 0.0,
        applies: 0,
        verifier_calls: 0,
        controller_calls: 0,
    }
}

struct Finish {
    planner: PlannerKind,
    state: ReasoningState,
    score: StateScore,
    candidates: Vec<(Action, f64)>,
    pairs: Vec<(ReasoningState, Action)>,
    trace: Vec<SimulationRecord>,
}

impl Finish {
    fn into_result(self) -> PlanResult {
        let p_end = end_proved_prior(self.candidates.iter().map(|(a, p)| (a, *p)));
        PlanResult {
            planner: self.planner,
            option_score: (self.score.total + p_end) / 2.0,
            end_proved_prior: p_end,
            simulations_run: self.trace.len() as u32,
            actions_used: self.trace.iter().map(|r| r.applies).sum(),
            trajectory: Trajectory {
                pairs: self.pairs,
                final_score: self.score.total,
            },
            best_score: self.score,
            best_state: self.state,
            trace: self.trace,
        }
    }
}

/// Follows the highest-prior action until an End is chosen or the budget runs out.
pub fn greedy_plan(
    hypothesis: &str,
    question: &str,
    option: &str,
    env: &Environment,
    config: &PlanConfig,
) -> Result<PlanResult, PlanError> {
    let mut state = new_episode(hypothesis, question, option);
    let mut score = state_score(&state, &env.adapters)?;
    let mut candidates = propose(env, &state, config.candidates_per_state)?;
    let mut pairs = Vec::new();
    let mut trace = Vec::new();
    let mut used = 0;
    while let Some(i) = max_prior(&candidates) {
        let action = candidates[i].0.clone();
        if action.is_end() {
            pairs.push((state.clone(), action));
            break;
        }
        if used >= config.budget {
            break;
        }
        let mut rec = record(&pairs);
        rec.expanded = Some(action.to_string());
        rec.applies = 1;
        used += 1;
        let next = match env.apply(&state, &action) {
            Ok(next) => next,
            Err(EnvError::InvalidStep { .. }) => {
                candidates.remove(i);
                trace.push(rec);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        score = state_score(&next, &env.adapters)?;
        candidates = propose(env, &next, config.candidates_per_state)?;
        rec.value = score.total;
        rec.verifier_calls = 1;
        rec.controller_calls = 1;
        trace.push(rec);
        pairs.push((state, action));
        state = next;
    }
    Ok(Finish {
        planner: PlannerKind::Greedy,
        state,
        score,
        candidates,
        pairs,
        trace,
    }
    .into_result())
}

/// Executes every candidate and moves to the successor with the best state score.
pub fn oaf_plan(
    hypothesis: &str,
    question: &str,
    option: &str,
    env: &Environment,
    config: &PlanConfig,
) -> Result<PlanResult, PlanError> {
    let mut state = new_episode(hypothesis, question, option);
    let mut score = state_score(&state, &env.adapters)?;
    let mut candidates = propose(env, &state, config.candidates_per_state)?;
    let mut pairs = Vec::new();
    let mut trace = Vec::new();
    let mut used = 0;
    while !candidates.is_empty() && used < config.budget {
        let mut rec = record(&pairs);
        let mut children: Vec<(usize, ReasoningState, StateScore)> = Vec::new();
        for (i, (action, _)) in candidates.iter().enumerate() {
            if used >= config.budget {
                break;
            }
            used += 1;
            rec.applies += 1;
            let child = match env.apply(&state, action) {
                Ok(c) => c,
                Err(EnvError::InvalidStep { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            rec.verifier_calls += 1;
            let s = state_score(&child, &env.adapters)?;
            children.push((i, child, s));
        }
        let mut best: Option<usize> = None;
        for (j, (i, _, s)) in children.iter().enumerate() {
            best = match best {
                None => Some(j),
                Some(b) => {
                    let (bi, _, bs) = &children[b];
                    let better = s.total > bs.total + SCORE_EPS
                        || ((s.total - bs.total).abs() <= SCORE_EPS
                            && candidates[*i].1 > candidates[*bi].1 + SCORE_EPS);
                    Some(if better { j } else { b })
                }
            };
        }
        let Some(b) = best else {
            trace.push(rec);
            break;
        };
        let (i, child, child_score) = children.swap_remove(b);
        let action = candidates[i].0.clone();
        rec.expanded = Some(action.to_string());
        rec.value = child_score.total;
        if action.is_end() {
            trace.push(rec);
            pairs.push((state.clone(), action));
            break;
        }
        rec.controller_calls = 1;
        trace.push(rec);
        candidates = propose(env, &child, config.candidates_per_state)?;
        pairs.push((state, action));
        state = child;
        score = child_score;
    }
    if candidates.is_empty() && !state.is_terminal() {
        candidates = propose(env, &state, config.candidates_per_state)?;
    }
    Ok(Finish {
        planner: PlannerKind::Oaf,
        state,
        score,
        candidates,
        pairs,
        trace,
    }
    .into_result())
}

struct BeamEntry {
    state: ReasoningState,
    score: StateScore,
    prior: f64,
    parent: Option<usize>,
    action: Option<Action>,
    candidates: Option<Vec<(Action, f64)>>,
}

/// Keeps the best `beam_width` states by state score at every depth.
pub fn beam_plan(
    hypothesis: &str,
    question: &str,
    option: &str,
    env: &Environment,
    config: &PlanConfig,
) -> Result<PlanResult, PlanError> {
    let root = new_episode(hypothesis, question, option);
    let mut arena = vec![BeamEntry {
        score: state_score(&root, &env.adapters)?,
        state: root,
        prior: 1.0,
        parent: None,
        action: None,
        candidates: None,
    }];
    let mut beam = vec![0usize];
    let mut trace = Vec::new();
    let mut used = 0;
    loop {
        let mut rec = record(&[]);
        let mut pool: Vec<usize> = Vec::new();
        let mut grew = false;
        for &b in &beam {
            if arena[b].state.is_terminal() || used >= config.budget {
                pool.push(b);
                continue;
            }
            let cands = match &arena[b].candidates {
                Some(c) => c.clone(),
                None => {
                    rec.controller_calls += 1;
                    let c = propose(env, &arena[b].state, config.candidates_per_state)?;
                    arena[b].candidates = Some(c.clone());
                    c
                }
            };
            if cands.is_empty() {
                pool.push(b);
                continue;
            }
            let mut expanded_all = true;
            for (action, prior) in cands {
                if used >= config.budget {
                    expanded_all = false;
                    break;
                }
                used += 1;
                rec.applies += 1;
                let child = match env.apply(&arena[b].state, &action) {
                    Ok(c) => c,
                    Err(EnvError::InvalidStep { .. }) => continue,
                    Err(e) => return Err(e.into()),
                };
                rec.verifier_calls += 1;
                let score = state_score(&child, &env.adapters)?;
                arena.push(BeamEntry {
                    state: child,
                    score,
                    prior,
                    parent: Some(b),
                    action: Some(action),
                    candidates: None,
                });
                pool.push(arena.len() - 1);
                grew = true;
            }
            if !expanded_all {
                pool.push(b);
            }
        }
        if !grew {
            break;
        }
        pool.sort_by(|&a, &b| {
            let (ea, eb) = (&arena[a], &arena[b]);
            let by_score = if (ea.score.total - eb.score.total).abs() <= SCORE_EPS {
                std::cmp::Ordering::Equal
            } else {
                eb.score.total.total_cmp(&ea.score.total)
            };
            by_score
                .then_with(|| {
                    if (ea.prior - eb.prior).abs() <= SCORE_EPS {
                        std::cmp::Ordering::Equal
                    } else {
                        eb.prior.total_cmp(&ea.prior)
                    }
                })
                .then(a.cmp(&b))
        });
        pool.dedup();
        pool.truncate(config.beam_width.max(1));
        rec.value = arena[pool[0]].score.total;
        trace.push(rec);
        beam = pool;
        if used >= config.budget || beam.iter().all(|&b| arena[b].state.is_terminal()) {
            break;
        }
    }

    // a finished entry is represented by the state it ended from
    let top = beam[0];
    let (best, final_action) = if arena[top].state.is_terminal() {
        (arena[top].parent.unwrap_or(top), arena[top].action.clone())
    } else {
        (top, None)
    };
    let mut pairs = Vec::new();
    let mut at = best;
    while let (Some(p), Some(a)) = (arena[at].parent, arena[at].action.clone()) {
        pairs.push((arena[p].state.clone(), a));
        at = p;
    }
    pairs.reverse();
    if let Some(a) = final_action {
        pairs.push((arena[best].state.clone(), a));
    }
    let candidates = match arena[best].candidates.clone() {
        Some(c) => c,
        None => propose(env, &arena[best].state, config.candidates_per_state)?,
    };
    Ok(Finish {
        planner: PlannerKind::Beam,
        state: arena[best].state.clone(),
        score: arena[best].score.clone(),
        candidates,
        pairs,
        trace,
    }
    .into_result())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{
        AdapterError, AdapterSuite, Controller, Entailment, ReasoningType, Retriever, Similarity,
        StepVerifier,
    };
    use crate::environment::EnvConfig;
    use crate::types::{Fact, Query, SentenceRef};
    use std::sync::Arc;

    /// Proposes four invalid entailments and one retrieval at the root, ends elsewhere.
    struct Picky;

    impl Controller for Picky {
        fn predict(&self, text: &str, _: usize) -> Result<Vec<(Action, f64)>, AdapterError> {
            let bad = |a: u32, b: u32| (Action::entail([SentenceRef::sent(a), SentenceRef::sent(b)]), 0.9);
            if text.contains("$context$ none") {
                Ok(vec![bad(1, 2), bad(3, 4), bad(5, 6), bad(7, 8), (Action::retrieve(Query::Hypothesis), 0.1)])
            } else {
                Ok(vec![(Action::end(true), 0.7)])
            }
        }
    }
    impl Retriever for Picky {
        fn retrieve(&self, _: &str, _: usize, _: usize) -> Result<Vec<Fact>, AdapterError> {
            Ok(vec![Fact::new("a", "alpha")])
        }
    }
    impl Entailment for Picky {
        fn generate(&self, _: &[String], _: &str, _: ReasoningType) -> Result<String, AdapterError> {
            Ok("c".into())
        }
    }
    impl StepVerifier for Picky {
        fn score(&self, _: &[String], _: &str) -> Result<f64, AdapterError> {
            Ok(0.5)
        }
    }
    impl Similarity for Picky {
        fn score(&self, _: &str, _: &str) -> Result<f64, AdapterError> {
            Ok(0.5)
        }
    }

    #[test]
    fn oaf_follows_the_only_valid_successor() {
        let p = Arc::new(Picky);
        let env = Environment::new(
            EnvConfig::default(),
            AdapterSuite::new(p.clone(), p.clone(), p.clone(), p.clone(), p),
        );
        let r = oaf_plan("h", "q", "o", &env, &PlanConfig::default()).unwrap();
        assert_eq!(r.trajectory.pairs[0].1, Action::retrieve(Query::Hypothesis));
        assert_eq!(r.trace[0].applies, 1);
        assert_eq!(r.best_state.premises.len(), 1);
        assert_eq!(r.end_proved_prior, 0.7);
        assert_eq!(r.option_score, 0.35);
    }
}
