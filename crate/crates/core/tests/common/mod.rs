#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use entailplan::adapters::{
    jaccard_similarity, AdapterError, AdapterSuite, Controller, Entailment, ReasoningType,
    Retriever, Similarity, StepVerifier,
};
use entailplan::{Action, Fact};

type Propose = dyn Fn(&str) -> Vec<(Action, f64)> + Send + Sync;

/// Hand-scripted adapters.
///
/// Conclusions are the premise texts joined by `" + "`. Step validity, the root-to-H
/// check and root similarity all read the same `quality` table keyed by conclusion text,
/// so a one-step state scores exactly `quality[conclusion]`.
pub struct Script {
    pub facts: Vec<Fact>,
    pub quality: HashMap<String, f64>,
    pub propose: Box<Propose>,
}

impl Controller for Script {
    fn predict(&self, state_text: &str, n: usize) -> Result<Vec<(Action, f64)>, AdapterError> {
        let mut c = (self.propose)(state_text);
        c.truncate(n);
        Ok(c)
    }
}

impl Retriever for Script {
    fn retrieve(&self, _query: &str, k: usize, page: usize) -> Result<Vec<Fact>, AdapterError> {
        Ok(self.facts.iter().skip(k * page).take(k).cloned().collect())
    }
}

impl Entailment for Script {
    fn generate(&self, premises: &[String], _h: &str, _kind: ReasoningType) -> Result<String, AdapterError> {
        Ok(premises.join(" + "))
    }
}

impl StepVerifier for Script {
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, AdapterError> {
        let key = if premises.len() == 1 { &premises[0] } else { conclusion };
        Ok(self.quality.get(key).copied().unwrap_or(0.0))
    }
}

impl Similarity for Script {
    fn score(&self, a: &str, b: &str) -> Result<f64, AdapterError> {
        if a == b {
            return Ok(1.0);
        }
        Ok(self.quality.get(a).copied().unwrap_or(0.0))
    }
}

impl Script {
    pub fn suite(self) -> AdapterSuite {
        let s = Arc::new(self);
        AdapterSuite::new(s.clone(), s.clone(), s.clone(), s.clone(), s)
    }
}

/// Similarity by token Jaccard, identical strings score 1.
pub struct Jaccard;

impl Similarity for Jaccard {
    fn score(&self, a: &str, b: &str) -> Result<f64, AdapterError> {
        Ok(jaccard_similarity(a, b))
    }
}

/// Fixed similarity for every distinct pair; identical strings score 1.
pub struct Flat(pub f64);

impl Similarity for Flat {
    fn score(&self, a: &str, b: &str) -> Result<f64, AdapterError> {
        Ok(if a == b { 1.0 } else { self.0 })
    }
}

pub fn facts(texts: &[&str]) -> Vec<Fact> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Fact::new(format!("f{i}"), *t))
        .collect()
}

pub fn act(text: &str) -> Action {
    text.parse().unwrap()
}
