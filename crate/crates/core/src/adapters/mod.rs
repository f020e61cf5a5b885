//! Interfaces to the learned components and their back-ends.
//!
//! Every planner talks to an [`AdapterSuite`]. The oracle back-end answers from a
//! [`GoldBank`]; the remote back-end speaks a small JSON-over-HTTP protocol.

mod bank;
mod memo;
pub mod oracle;
pub mod remote;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Action, Fact};

pub use bank::{BankError, DecoyTree, Difficulty, GoldBank, GoldEntry};
pub use memo::{CallCounts, CallStats};
pub use oracle::{build_oracle_suite, build_oracle_suite_for_env, jaccard_similarity, OracleNoise};
pub use remote::{RemoteConfig, RemoteSuite};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdapterError {
    #[error("{endpoint}: request timed out")]
    Timeout { endpoint: String },
    #[error("{endpoint}: transport failure: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint}: protocol error: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("oracle: {0}")]
    Oracle(String),
}

/// Reasoning types of the prefixed entailment module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningType {
    Substitution,
    Conjunction,
    IfThen,
}

impl ReasoningType {
    pub const ALL: [ReasoningType; 3] = [
        ReasoningType::Substitution,
        ReasoningType::Conjunction,
        ReasoningType::IfThen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningType::Substitution => "substitution",
            ReasoningType::Conjunction => "conjunction",
            ReasoningType::IfThen => "if_then",
        }
    }
}

impl fmt::Display for ReasoningType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Proposes candidate actions for a linearized state.
pub trait Controller: Send + Sync {
    /// At most `n` distinct candidates, priors in `[0, 1]`, sorted by descending prior.
    fn predict(&self, state_text: &str, n: usize) -> Result<Vec<(Action, f64)>, AdapterError>;

    fn is_deterministic(&self) -> bool {
        true
    }
}

pub trait Retriever: Send + Sync {
    /// Page `page` of the ranking: ranks `page*k + 1 ..= (page+1)*k`.
    fn retrieve(&self, query: &str, k: usize, page: usize) -> Result<Vec<Fact>, AdapterError>;

    fn is_deterministic(&self) -> bool {
        true
    }
}

pub trait Entailment: Send + Sync {
    fn generate(
        &self,
        premises: &[String],
        hypothesis: &str,
        kind: ReasoningType,
    ) -> Result<String, AdapterError>;

    fn is_deterministic(&self) -> bool {
        true
    }
}

pub trait StepVerifier: Send + Sync {
    /// Probability in `[0, 1]` that `conclusion` follows from `premises`.
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, AdapterError>;

    fn is_deterministic(&self) -> bool {
        true
    }
}

pub trait Similarity: Send + Sync {
    fn score(&self, a: &str, b: &str) -> Result<f64, AdapterError>;

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Handles to the five learned components.
#[derive(Clone)]
pub struct AdapterSuite {
    pub controller: Arc<dyn Controller>,
    pub retriever: Arc<dyn Retriever>,
    pub entailment: Arc<dyn Entailment>,
    pub step_verifier: Arc<dyn StepVerifier>,
    pub similarity: Arc<dyn Similarity>,
    stats: Option<Arc<CallStats>>,
}

impl fmt::Debug for AdapterSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdapterSuite")
            .field("deterministic", &self.is_deterministic())
            .field("memoized", &self.stats.is_some())
            .finish()
    }
}

impl AdapterSuite {
    pub fn new(
        controller: Arc<dyn Controller>,
        retriever: Arc<dyn Retriever>,
        entailment: Arc<dyn Entailment>,
        step_verifier: Arc<dyn StepVerifier>,
        similarity: Arc<dyn Similarity>,
    ) -> Self {
        Self {
            controller,
            retriever,
            entailment,
            step_verifier,
            similarity,
            stats: None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.controller.is_deterministic()
            && self.retriever.is_deterministic()
            && self.entailment.is_deterministic()
            && self.step_verifier.is_deterministic()
            && self.similarity.is_deterministic()
    }

    /// Wraps every handle in a cache keyed by canonical input strings.
    pub fn memoized(self) -> Self {
        memo::wrap(self)
    }

    /// Call counters, available once the suite is memoized.
    pub fn call_counts(&self) -> Option<CallCounts> {
        self.stats.as_ref().map(|s| s.snapshot())
    }
}

/// Maps a raw score onto `[0, 1]`; NaN becomes 0.
pub fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// Sorts candidates by descending prior (stable), dedups keeping the first, truncates to `n`.
pub(crate) fn normalize_candidates(
    mut candidates: Vec<(Action, f64)>,
    n: usize,
) -> Vec<(Action, f64)> {
    for c in &mut candidates {
        c.1 = clamp_unit(c.1);
    }
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut out: Vec<(Action, f64)> = Vec::with_capacity(n);
    for (a, p) in candidates {
        if out.len() == n {
            break;
        }
        if !out.iter().any(|(b, _)| *b == a) {
            out.push((a, p));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Query, SentenceRef};

    #[test]
    fn clamps_scores() {
        assert_eq!(clamp_unit(-0.3), 0.0);
        assert_eq!(clamp_unit(1.7), 1.0);
        assert_eq!(clamp_unit(f64::NAN), 0.0);
        assert_eq!(clamp_unit(0.25), 0.25);
    }

    #[test]
    fn candidates_are_sorted_deduped_and_truncated() {
        let r = Action::retrieve(Query::Hypothesis);
        let e = Action::entail([SentenceRef::sent(1), SentenceRef::sent(2)]);
        let out = normalize_candidates(
            vec![
                (r.clone(), 0.2),
                (e.clone(), 0.9),
                (r.clone(), 0.5),
                (Action::end(true), 1.4),
            ],
            2,
        );
        assert_eq!(out, vec![(Action::end(true), 1.0), (e, 0.9)]);
    }
}
