//! Deterministic executor of controller actions.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, AdapterSuite, ReasoningType};
use crate::types::{
    Action, EntailmentTree, Fact, PartialTree, Query, ReasoningState, SentenceRef, Step,
    TreeError, DEFAULT_MAX_PREMISES,
};
use crate::verifier::{self, VerifierError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub max_premises: usize,
    pub retrieve_k: usize,
    pub action_budget: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_premises: DEFAULT_MAX_PREMISES,
            retrieve_k: 25,
            action_budget: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("`{action}`: {source}")]
    Adapter {
        action: String,
        #[source]
        source: AdapterError,
    },
    #[error("`{action}`: {reason}")]
    InvalidStep { action: String, reason: String },
    #[error("`{action}`: {reference} is not in the candidate premises")]
    UnknownRef {
        action: String,
        reference: SentenceRef,
    },
    #[error("`{action}`: state already ended")]
    Terminal { action: String },
    #[error("`{action}`: {source}")]
    Tree {
        action: String,
        #[source]
        source: TreeError,
    },
    #[error("state has no steps to extract a tree from")]
    EmptyTree,
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

impl EnvError {
    pub fn is_adapter(&self) -> bool {
        matches!(
            self,
            EnvError::Adapter { .. } | EnvError::Verifier(VerifierError::Adapter(_))
        )
    }
}

/// Executes actions against states through an adapter suite. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Environment {
    pub config: EnvConfig,
    pub adapters: AdapterSuite,
    applies: Arc<AtomicU64>,
}

pub fn new_episode(hypothesis: &str, question: &str, option: &str) -> ReasoningState {
    ReasoningState {
        hypothesis: hypothesis.to_string(),
        question: question.to_string(),
        option: option.to_string(),
        tree: PartialTree::empty(),
        premises: Vec::new(),
        sentences: Vec::new(),
        retrieval_counts: Default::default(),
        actions_used: 0,
        ended: None,
    }
}

/// X after a retrieval, before new facts receive references: existing ints, then the
/// query sentence, then retrieved facts in rank order, deduplicated by text and capped.
/// When the ints alone exceed the cap, the oldest ones are dropped.
pub(crate) fn retrieval_texts(
    context: &[(SentenceRef, String)],
    sent_query: Option<&(SentenceRef, String)>,
    retrieved: &[Fact],
    cap: usize,
) -> Vec<(Option<SentenceRef>, String)> {
    let ints: Vec<&(SentenceRef, String)> = context.iter().filter(|(r, _)| r.is_int()).collect();
    let skip = ints.len().saturating_sub(cap);
    let mut out: Vec<(Option<SentenceRef>, String)> = ints[skip..]
        .iter()
        .map(|(r, t)| (Some(*r), t.clone()))
        .collect();
    let mut seen: HashSet<String> = out.iter().map(|(_, t)| t.clone()).collect();
    if let Some((r, t)) = sent_query {
        if out.len() < cap && seen.insert(t.clone()) {
            out.push((Some(*r), t.clone()));
        }
    }
    for f in retrieved {
        if out.len() >= cap {
            break;
        }
        if seen.insert(f.text.clone()) {
            out.push((None, f.text.clone()));
        }
    }
    out
}

fn sent_ref_for(state: &mut ReasoningState, text: &str) -> SentenceRef {
    match state.sentences.iter().position(|s| s == text) {
        Some(i) => SentenceRef::sent(i as u32 + 1),
        None => {
            state.sentences.push(text.to_string());
            SentenceRef::sent(state.sentences.len() as u32)
        }
    }
}

impl Environment {
    pub fn new(config: EnvConfig, adapters: AdapterSuite) -> Self {
        Self {
            config,
            adapters,
            applies: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Total successful and failed `apply` calls made through this environment and its clones.
    pub fn apply_count(&self) -> u64 {
        self.applies.load(Ordering::Relaxed)
    }

    /// Drops invalid actions and duplicates (keeping the highest prior, in first-seen order).
    pub fn filter_actions(
        &self,
        state: &ReasoningState,
        candidates: Vec<(Action, f64)>,
    ) -> Vec<(Action, f64)> {
        filter_actions(state, candidates)
    }

    pub fn apply(&self, state: &ReasoningState, action: &Action) -> Result<ReasoningState, EnvError> {
        self.applies.fetch_add(1, Ordering::Relaxed);
        let label = || action.to_string();
        if state.is_terminal() {
            return Err(EnvError::Terminal { action: label() });
        }
        let mut next = state.clone();
        match action {
            Action::Retrieve { query } => self.retrieve(&mut next, query, &label)?,
            Action::Entail { premises } => self.entail(&mut next, premises, &label)?,
            Action::End { proved } => next.ended = Some(*proved),
        }
        next.actions_used += 1;
        Ok(next)
    }

    fn retrieve(
        &self,
        state: &mut ReasoningState,
        query: &Query,
        label: &dyn Fn() -> String,
    ) -> Result<(), EnvError> {
        let (text, sent_query) = match query {
            Query::Hypothesis => (state.hypothesis.clone(), None),
            Query::Sentence(r) => {
                let text = state
                    .premise_text(*r)
                    .ok_or_else(|| EnvError::UnknownRef {
                        action: label(),
                        reference: *r,
                    })?
                    .to_string();
                let sq = r.is_sent().then(|| (*r, text.clone()));
                (text, sq)
            }
        };
        let page = state.retrieval_counts.get(&text).copied().unwrap_or(0) as usize;
        let facts = self
            .adapters
            .retriever
            .retrieve(&text, self.config.retrieve_k, page)
            .map_err(|source| EnvError::Adapter {
                action: label(),
                source,
            })?;
        let merged = retrieval_texts(
            &state.premises,
            sent_query.as_ref(),
            &facts,
            self.config.max_premises,
        );
        state.premises = merged
            .into_iter()
            .map(|(r, t)| match r {
                Some(r) => (r, t),
                None => (sent_ref_for(state, &t), t),
            })
            .collect();
        *state.retrieval_counts.entry(text).or_insert(0) += 1;
        Ok(())
    }

    fn entail(
        &self,
        state: &mut ReasoningState,
        premises: &[SentenceRef],
        label: &dyn Fn() -> String,
    ) -> Result<(), EnvError> {
        let texts = premises
            .iter()
            .map(|r| {
                state
                    .premise_text(*r)
                    .map(str::to_string)
                    .ok_or_else(|| EnvError::UnknownRef {
                        action: label(),
                        reference: *r,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let adapter_err = |source| EnvError::Adapter {
            action: label(),
            source,
        };
        let mut best: Option<(String, f64)> = None;
        for kind in ReasoningType::ALL {
            let conclusion = self
                .adapters
                .entailment
                .generate(&texts, &state.hypothesis, kind)
                .map_err(adapter_err)?;
            let conclusion = conclusion.trim();
            if conclusion.is_empty() {
                continue;
            }
            let score = crate::adapters::clamp_unit(
                self.adapters
                    .step_verifier
                    .score(&texts, conclusion)
                    .map_err(adapter_err)?,
            );
            if best.as_ref().is_none_or(|(_, b)| score > *b + crate::SCORE_EPS) {
                best = Some((conclusion.to_string(), score));
            }
        }
        let (text, score) = best.ok_or_else(|| EnvError::InvalidStep {
            action: label(),
            reason: "every reasoning type produced an empty conclusion".into(),
        })?;
        let conclusion = state.next_int();
        let mut step = Step::new(premises.to_vec(), conclusion, text.clone());
        step.validity = Some(score);
        state.tree.push(step).map_err(|source| EnvError::Tree {
            action: label(),
            source,
        })?;
        state.premises.push((conclusion, text));
        if state.premises.len() > self.config.max_premises {
            let evict = state
                .premises
                .iter()
                .rposition(|(r, _)| r.is_sent())
                .unwrap_or(0);
            state.premises.remove(evict);
        }
        Ok(())
    }

    /// The connected tree whose root has the highest faithfulness score (lowest int on ties).
    pub fn extract_best_tree(&self, state: &ReasoningState) -> Result<EntailmentTree, EnvError> {
        if state.tree.is_empty() {
            return Err(EnvError::EmptyTree);
        }
        let (_, root) = verifier::faithful_score(&state.tree, state, &state.hypothesis, &self.adapters)?;
        let root = root.expect("non-empty tree has a root");
        let subtree = state.tree.subtree(root).map_err(|source| EnvError::Tree {
            action: "extract".into(),
            source,
        })?;
        Ok(state.with_leaf_texts(subtree))
    }
}

pub fn filter_actions(state: &ReasoningState, candidates: Vec<(Action, f64)>) -> Vec<(Action, f64)> {
    if state.is_terminal() {
        return Vec::new();
    }
    let mut out: Vec<(Action, f64)> = Vec::with_capacity(candidates.len());
    for (action, prior) in candidates {
        if prior.is_nan() || !is_valid(state, &action) {
            continue;
        }
        let prior = prior.clamp(0.0, 1.0);
        match out.iter_mut().find(|(a, _)| *a == action) {
            Some(existing) => existing.1 = existing.1.max(prior),
            None => out.push((action, prior)),
        }
    }
    out
}

fn is_valid(state: &ReasoningState, action: &Action) -> bool {
    match action {
        Action::Retrieve { query: Query::Hypothesis } => true,
        Action::Retrieve {
            query: Query::Sentence(r),
        } => state.in_premises(*r),
        Action::Entail { premises } => {
            premises.len() >= 2
                && premises.iter().all(|p| state.in_premises(*p))
                && state
                    .tree
                    .accepts(&Step::new(premises.clone(), state.next_int(), ""))
                    .is_ok()
        }
        Action::End { .. } => true,
    }
}
