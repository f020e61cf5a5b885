//! Caching layer keyed by canonical input strings.
//!
//! Lookups take the lock briefly; the inner adapter is called outside the lock, so two
//! concurrent misses on the same key may both call through. Outputs are pure, so the
//! second insert is a no-op in effect.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::{
    clamp_unit, AdapterError, AdapterSuite, Controller, Entailment, ReasoningType, Retriever,
    Similarity, StepVerifier,
};
use crate::types::{Action, Fact};

const SEP: char = '\u{1f}';

#[derive(Debug, Default)]
pub struct CallStats {
    controller: Counter,
    retriever: Counter,
    entailment: Counter,
    step_verifier: Counter,
    similarity: Counter,
}

#[derive(Debug, Default)]
struct Counter {
    calls: AtomicU64,
    misses: AtomicU64,
}

impl Counter {
    fn snapshot(&self) -> (u64, u64) {
        (
            self.calls.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
        )
    }
}

/// `(calls, cache misses)` per adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CallCounts {
    pub controller: (u64, u64),
    pub retriever: (u64, u64),
    pub entailment: (u64, u64),
    pub step_verifier: (u64, u64),
    pub similarity: (u64, u64),
}

impl CallStats {
    pub fn snapshot(&self) -> CallCounts {
        CallCounts {
            controller: self.controller.snapshot(),
            retriever: self.retriever.snapshot(),
            entailment: self.entailment.snapshot(),
            step_verifier: self.step_verifier.snapshot(),
            similarity: self.similarity.snapshot(),
        }
    }
}

struct Cache<K, V> {
    map: Mutex<HashMap<K, V>>,
}

impl<K: Eq + Hash, V: Clone> Cache<K, V> {
    fn new() -> Self {
        Self {
            map: Mutex::new(HashMap::new()),
        }
    }

    fn get_or_try(
        &self,
        key: K,
        counter: &Counter,
        compute: impl FnOnce() -> Result<V, AdapterError>,
    ) -> Result<V, AdapterError> {
        counter.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(v) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        counter.misses.fetch_add(1, Ordering::Relaxed);
        let v = compute()?;
        self.map
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| v.clone());
        Ok(v)
    }
}

fn join_key(parts: &[String]) -> String {
    let mut key = String::new();
    for p in parts {
        key.push_str(p);
        key.push(SEP);
    }
    key
}

struct MemoController {
    inner: Arc<dyn Controller>,
    cache: Cache<(String, usize), Vec<(Action, f64)>>,
    stats: Arc<CallStats>,
}

impl Controller for MemoController {
    fn predict(&self, state_text: &str, n: usize) -> Result<Vec<(Action, f64)>, AdapterError> {
        self.cache
            .get_or_try((state_text.to_string(), n), &self.stats.controller, || {
                let mut out = self.inner.predict(state_text, n)?;
                for c in &mut out {
                    c.1 = clamp_unit(c.1);
                }
                Ok(out)
            })
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

struct MemoRetriever {
    inner: Arc<dyn Retriever>,
    cache: Cache<(String, usize, usize), Vec<Fact>>,
    stats: Arc<CallStats>,
}

impl Retriever for MemoRetriever {
    fn retrieve(&self, query: &str, k: usize, page: usize) -> Result<Vec<Fact>, AdapterError> {
        self.cache
            .get_or_try((query.to_string(), k, page), &self.stats.retriever, || {
                self.inner.retrieve(query, k, page)
            })
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

struct MemoEntailment {
    inner: Arc<dyn Entailment>,
    cache: Cache<(String, String, ReasoningType), String>,
    stats: Arc<CallStats>,
}

impl Entailment for MemoEntailment {
    fn generate(
        &self,
        premises: &[String],
        hypothesis: &str,
        kind: ReasoningType,
    ) -> Result<String, AdapterError> {
        let key = (join_key(premises), hypothesis.to_string(), kind);
        self.cache.get_or_try(key, &self.stats.entailment, || {
            self.inner.generate(premises, hypothesis, kind)
        })
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

struct MemoStepVerifier {
    inner: Arc<dyn StepVerifier>,
    cache: Cache<(String, String), f64>,
    stats: Arc<CallStats>,
}

impl StepVerifier for MemoStepVerifier {
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, AdapterError> {
        let key = (join_key(premises), conclusion.to_string());
        self.cache.get_or_try(key, &self.stats.step_verifier, || {
            self.inner.score(premises, conclusion).map(clamp_unit)
        })
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

struct MemoSimilarity {
    inner: Arc<dyn Similarity>,
    cache: Cache<(String, String), f64>,
    stats: Arc<CallStats>,
}

impl Similarity for MemoSimilarity {
    fn score(&self, a: &str, b: &str) -> Result<f64, AdapterError> {
        self.cache
            .get_or_try((a.to_string(), b.to_string()), &self.stats.similarity, || {
                self.inner.score(a, b).map(clamp_unit)
            })
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

pub(super) fn wrap(suite: AdapterSuite) -> AdapterSuite {
    if suite.stats.is_some() {
        return suite;
    }
    let stats = Arc::new(CallStats::default());
    AdapterSuite {
        controller: Arc::new(MemoController {
            inner: suite.controller,
            cache: Cache::new(),
            stats: stats.clone(),
        }),
        retriever: Arc::new(MemoRetriever {
            inner: suite.retriever,
            cache: Cache::new(),
            stats: stats.clone(),
        }),
        entailment: Arc::new(MemoEntailment {
            inner: suite.entailment,
            cache: Cache::new(),
            stats: stats.clone(),
        }),
        step_verifier: Arc::new(MemoStepVerifier {
            inner: suite.step_verifier,
            cache: Cache::new(),
            stats: stats.clone(),
        }),
        similarity: Arc::new(MemoSimilarity {
            inner: suite.similarity,
            cache: Cache::new(),
            stats: stats.clone(),
        }),
        stats: Some(stats),
    }
}
