//! State scoring: step validity, hypothesis faithfulness, and their mean.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{clamp_unit, AdapterError, AdapterSuite};
use crate::types::{EntailmentTree, PartialTree, ReasoningState, SentenceRef, SCORE_EPS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifierError {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("{0} has no text")]
    Unresolvable(SentenceRef),
}

/// Resolves references to sentence texts.
pub trait TextLookup {
    fn text(&self, r: SentenceRef) -> Option<&str>;
}

impl TextLookup for ReasoningState {
    fn text(&self, r: SentenceRef) -> Option<&str> {
        self.resolve(r)
    }
}

impl TextLookup for EntailmentTree {
    fn text(&self, r: SentenceRef) -> Option<&str> {
        self.text_of(r)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StateScore {
    pub valid: f64,
    pub faithful: f64,
    pub total: f64,
    pub per_step: Vec<(usize, f64)>,
    pub best_root: Option<SentenceRef>,
}

fn premise_texts(
    tree: &PartialTree,
    index: usize,
    lookup: &dyn TextLookup,
) -> Result<Vec<String>, VerifierError> {
    tree.steps()[index]
        .premises
        .iter()
        .map(|p| {
            lookup
                .text(*p)
                .map(str::to_string)
                .ok_or(VerifierError::Unresolvable(*p))
        })
        .collect()
}

/// Mean step validity, using stored validities where present. Empty tree scores 0.
pub fn valid_score(
    tree: &PartialTree,
    lookup: &dyn TextLookup,
    adapters: &AdapterSuite,
) -> Result<(f64, Vec<(usize, f64)>), VerifierError> {
    let mut per_step = Vec::with_capacity(tree.len());
    for (i, step) in tree.steps().iter().enumerate() {
        let v = match step.validity {
            Some(v) => v,
            None => adapters
                .step_verifier
                .score(&premise_texts(tree, i, lookup)?, &step.conclusion_text)?,
        };
        per_step.push((i, clamp_unit(v)));
    }
    if per_step.is_empty() {
        return Ok((0.0, per_step));
    }
    let mean = per_step.iter().map(|(_, v)| v).sum::<f64>() / per_step.len() as f64;
    Ok((mean, per_step))
}

/// Faithfulness of every root, in step order.
pub fn root_scores(
    tree: &PartialTree,
    hypothesis: &str,
    adapters: &AdapterSuite,
) -> Result<Vec<(SentenceRef, f64)>, VerifierError> {
    tree.roots()
        .into_iter()
        .map(|root| {
            let text = &tree
                .step_for(root)
                .expect("roots are conclusions")
                .conclusion_text;
            let vh = clamp_unit(adapters.similarity.score(text, hypothesis)?);
            let vs = clamp_unit(
                adapters
                    .step_verifier
                    .score(std::slice::from_ref(text), hypothesis)?,
            );
            Ok((root, (vh + vs) / 2.0))
        })
        .collect()
}

/// Maximum root faithfulness and the root achieving it (lowest int index on ties).
pub fn faithful_score(
    tree: &PartialTree,
    _lookup: &dyn TextLookup,
    hypothesis: &str,
    adapters: &AdapterSuite,
) -> Result<(f64, Option<SentenceRef>), VerifierError> {
    let mut best: Option<(SentenceRef, f64)> = None;
    for (root, score) in root_scores(tree, hypothesis, adapters)? {
        let better = match best {
            None => true,
            Some((r, b)) => {
                score > b + SCORE_EPS || ((score - b).abs() <= SCORE_EPS && root.index < r.index)
            }
        };
        if better {
            best = Some((root, score));
        }
    }
    Ok(best.map_or((0.0, None), |(r, s)| (s, Some(r))))
}

pub fn tree_score(
    tree: &PartialTree,
    lookup: &dyn TextLookup,
    hypothesis: &str,
    adapters: &AdapterSuite,
) -> Result<StateScore, VerifierError> {
    if tree.is_empty() {
        return Ok(StateScore::default());
    }
    let (valid, per_step) = valid_score(tree, lookup, adapters)?;
    let (faithful, best_root) = faithful_score(tree, lookup, hypothesis, adapters)?;
    Ok(StateScore {
        valid,
        faithful,
        total: (valid + faithful) / 2.0,
        per_step,
        best_root,
    })
}

/// `V(s)`: mean of validity and faithfulness; 0 before the first step.
pub fn state_score(state: &ReasoningState, adapters: &AdapterSuite) -> Result<StateScore, VerifierError> {
    tree_score(&state.tree, state, &state.hypothesis, adapters)
}
