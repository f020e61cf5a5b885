use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{EntailmentTree, Fact, RefKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Chal,
}

/// A plausible but unfaithful derivation attached to a wrong option.
///
/// The oracle controller follows it like a gold tree and, once every step is done,
/// proposes `End: proved` with prior `confidence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyTree {
    pub option_index: usize,
    pub tree: EntailmentTree,
    pub leaf_ids: Vec<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldEntry {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub hypotheses: Vec<String>,
    pub correct_index: usize,
    /// Gold tree for `hypotheses[correct_index]`; `sent<k>` is `leaf_ids[k-1]`.
    pub gold: EntailmentTree,
    pub leaf_ids: Vec<String>,
    pub distractor_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decoys: Vec<DecoyTree>,
    /// Distractor the controller is biased towards right after the first retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misleading_id: Option<String>,
}

impl GoldEntry {
    pub fn hypothesis(&self) -> &str {
        &self.hypotheses[self.correct_index]
    }

    pub fn depth(&self) -> usize {
        self.gold.tree.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GoldBank {
    pub entries: Vec<GoldEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BankError {
    #[error("entry {id}: correct index {index} out of range for {options} options")]
    CorrectIndex {
        id: String,
        index: usize,
        options: usize,
    },
    #[error("entry {id}: {hypotheses} hypotheses for {options} options")]
    HypothesisCount {
        id: String,
        hypotheses: usize,
        options: usize,
    },
    #[error("entry {id}: fact `{fact}` is not in the corpus")]
    MissingFact { id: String, fact: String },
    #[error("entry {id}: leaf text for {leaf} does not match the corpus")]
    LeafText { id: String, leaf: String },
    #[error("entry {id}: gold tree is empty")]
    EmptyTree { id: String },
    #[error("entry {id}: decoy refers to option {option}")]
    DecoyOption { id: String, option: usize },
    #[error("duplicate entry id {0}")]
    DuplicateId(String),
}

impl GoldBank {
    pub fn new(entries: Vec<GoldEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GoldEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Checks indices, leaf membership and leaf texts against `corpus`.
    pub fn validate(&self, corpus: &[Fact]) -> Result<(), BankError> {
        let by_id: HashMap<&str, &str> = corpus
            .iter()
            .map(|f| (f.id.as_str(), f.text.as_str()))
            .collect();
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(BankError::DuplicateId(e.id.clone()));
            }
            if e.hypotheses.len() != e.options.len() {
                return Err(BankError::HypothesisCount {
                    id: e.id.clone(),
                    hypotheses: e.hypotheses.len(),
                    options: e.options.len(),
                });
            }
            if e.correct_index >= e.options.len() {
                return Err(BankError::CorrectIndex {
                    id: e.id.clone(),
                    index: e.correct_index,
                    options: e.options.len(),
                });
            }
            if e.gold.tree.is_empty() {
                return Err(BankError::EmptyTree { id: e.id.clone() });
            }
            check_tree(&e.id, &e.gold, &e.leaf_ids, &by_id)?;
            for fact in e.distractor_ids.iter().chain(e.misleading_id.iter()) {
                if !by_id.contains_key(fact.as_str()) {
                    return Err(BankError::MissingFact {
                        id: e.id.clone(),
                        fact: fact.clone(),
                    });
                }
            }
            for d in &e.decoys {
                if d.option_index >= e.options.len() || d.option_index == e.correct_index {
                    return Err(BankError::DecoyOption {
                        id: e.id.clone(),
                        option: d.option_index,
                    });
                }
                check_tree(&e.id, &d.tree, &d.leaf_ids, &by_id)?;
            }
        }
        Ok(())
    }
}

fn check_tree(
    id: &str,
    tree: &EntailmentTree,
    leaf_ids: &[String],
    corpus: &HashMap<&str, &str>,
) -> Result<(), BankError> {
    for leaf in tree.tree.leaves() {
        debug_assert_eq!(leaf.kind, RefKind::Sent);
        let fact_id = leaf_ids
            .get(leaf.index as usize - 1)
            .ok_or_else(|| BankError::MissingFact {
                id: id.to_string(),
                fact: leaf.to_string(),
            })?;
        let text = corpus
            .get(fact_id.as_str())
            .ok_or_else(|| BankError::MissingFact {
                id: id.to_string(),
                fact: fact_id.clone(),
            })?;
        if tree.leaf_texts.get(&leaf).map(String::as_str) != Some(*text) {
            return Err(BankError::LeafText {
                id: id.to_string(),
                leaf: leaf.to_string(),
            });
        }
    }
    Ok(())
}
