//! JSON-over-HTTP back-end.
//!
//! Endpoints (all `POST`, relative to `base_url`):
//! `/controller/predict`, `/retrieve`, `/entail`, `/verify_step`, `/similarity`.

use std::io;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    clamp_unit, normalize_candidates, AdapterError, AdapterSuite, Controller, Entailment,
    ReasoningType, Retriever, Similarity, StepVerifier,
};
use crate::types::{Action, Fact};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
    /// Delay before the first retry; doubled on each further attempt.
    pub backoff: Duration,
    /// Whether the server promises identical responses for identical requests.
    pub deterministic: bool,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
            backoff: Duration::from_millis(100),
            deterministic: false,
        }
    }
}

struct Client {
    agent: ureq::Agent,
    config: RemoteConfig,
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<io::Error>() {
            return matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock);
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

impl Client {
    fn call<T: DeserializeOwned>(&self, endpoint: &str, body: Value) -> Result<T, AdapterError> {
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), endpoint);
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            let err = match self.agent.post(&url).send_json(body.clone()) {
                Ok(resp) => {
                    return resp.into_json::<T>().map_err(|e| AdapterError::Protocol {
                        endpoint: endpoint.to_string(),
                        message: format!("bad response body: {e}"),
                    })
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    let err = AdapterError::Protocol {
                        endpoint: endpoint.to_string(),
                        message: format!("status {code}: {text}"),
                    };
                    // client errors will not improve on retry
                    if (400..500).contains(&code) {
                        return Err(err);
                    }
                    err
                }
                Err(ureq::Error::Transport(t)) if is_timeout(&t) => AdapterError::Timeout {
                    endpoint: endpoint.to_string(),
                },
                Err(ureq::Error::Transport(t)) => AdapterError::Transport {
                    endpoint: endpoint.to_string(),
                    message: t.to_string(),
                },
            };
            if attempt >= self.config.retries {
                return Err(err);
            }
            attempt += 1;
            thread::sleep(delay);
            delay *= 2;
        }
    }
}

#[derive(Deserialize)]
struct Candidate {
    action_text: String,
    prior: f64,
}

#[derive(Deserialize)]
struct PredictResponse {
    candidates: Vec<Candidate>,
}

#[derive(Deserialize)]
struct RetrieveResponse {
    facts: Vec<Fact>,
}

#[derive(Deserialize)]
struct EntailResponse {
    conclusion: String,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

/// Handle implementing every adapter trait against one server.
#[derive(Clone)]
pub struct RemoteSuite(Arc<Client>);

impl RemoteSuite {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self(Arc::new(Client { agent, config }))
    }

    pub fn into_suite(self) -> AdapterSuite {
        let h = Arc::new(self);
        AdapterSuite::new(h.clone(), h.clone(), h.clone(), h.clone(), h)
    }
}

impl Controller for RemoteSuite {
    fn predict(&self, state_text: &str, n: usize) -> Result<Vec<(Action, f64)>, AdapterError> {
        let resp: PredictResponse = self
            .0
            .call("/controller/predict", json!({ "state_text": state_text, "n": n }))?;
        // unparseable text is an invalid action and never reaches the planner
        let parsed = resp
            .candidates
            .into_iter()
            .filter_map(|c| c.action_text.parse::<Action>().ok().map(|a| (a, c.prior)))
            .collect();
        Ok(normalize_candidates(parsed, n))
    }

    fn is_deterministic(&self) -> bool {
        self.0.config.deterministic
    }
}

impl Retriever for RemoteSuite {
    fn retrieve(&self, query: &str, k: usize, page: usize) -> Result<Vec<Fact>, AdapterError> {
        let resp: RetrieveResponse = self
            .0
            .call("/retrieve", json!({ "query": query, "k": k, "page": page }))?;
        Ok(resp.facts)
    }

    fn is_deterministic(&self) -> bool {
        self.0.config.deterministic
    }
}

impl Entailment for RemoteSuite {
    fn generate(
        &self,
        premises: &[String],
        hypothesis: &str,
        kind: ReasoningType,
    ) -> Result<String, AdapterError> {
        let resp: EntailResponse = self.0.call(
            "/entail",
            json!({ "premises": premises, "hypothesis": hypothesis, "type": kind.as_str() }),
        )?;
        Ok(resp.conclusion)
    }

    fn is_deterministic(&self) -> bool {
        self.0.config.deterministic
    }
}

impl StepVerifier for RemoteSuite {
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, AdapterError> {
        let resp: ScoreResponse = self.0.call(
            "/verify_step",
            json!({ "premises": premises, "conclusion": conclusion }),
        )?;
        Ok(clamp_unit(resp.score))
    }

    fn is_deterministic(&self) -> bool {
        self.0.config.deterministic
    }
}

impl Similarity for RemoteSuite {
    fn score(&self, a: &str, b: &str) -> Result<f64, AdapterError> {
        let resp: ScoreResponse = self.0.call("/similarity", json!({ "a": a, "b": b }))?;
        Ok(clamp_unit(resp.score))
    }

    fn is_deterministic(&self) -> bool {
        self.0.config.deterministic
    }
}
