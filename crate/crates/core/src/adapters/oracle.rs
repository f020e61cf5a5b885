//! Deterministic synthetic back-end driven by a [`GoldBank`].
//!
//! With zero noise every gold tree is exactly recoverable: the retriever ranks gold
//! leaves first for the gold hypothesis, the entailment module reproduces gold
//! conclusions, the step verifier scores gold steps 1 and everything else 0, and the
//! controller proposes the behavior-cloning action with prior 1.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bank::{BankError, GoldBank};
use super::{
    normalize_candidates, AdapterError, AdapterSuite, Controller, Entailment, ReasoningType,
    Retriever, Similarity, StepVerifier,
};
use crate::environment::{retrieval_texts, EnvConfig};
use crate::linearize::{parse_state_text, StateView};
use crate::types::{Action, EntailmentTree, Fact, Query, SentenceRef};

/// Degradation knobs for the oracle back-end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleNoise {
    /// Probability that the step verifier inverts its judgement on a given input.
    pub step_flip_prob: f64,
    /// When set, controller priors become `softmax(score / t)` over the returned candidates.
    pub prior_temperature: Option<f64>,
    pub seed: u64,
}

impl Default for OracleNoise {
    fn default() -> Self {
        Self {
            step_flip_prob: 0.0,
            prior_temperature: None,
            seed: 0,
        }
    }
}

impl OracleNoise {
    pub fn is_zero(&self) -> bool {
        self.step_flip_prob == 0.0 && self.prior_temperature.is_none()
    }
}

/// Scores of the controller's alternative proposals, relative to the reference action's 1.0.
const ALT_ENTAIL: f64 = 0.5;
const ALT_END_UNPROVED: f64 = 0.3;
const ALT_RETRIEVE: f64 = 0.2;
const ALT_END_PROVED: f64 = 0.1;
/// Score kept by the reference action when a misleading retrieval outranks it.
const MISLED_REFERENCE: f64 = 0.9;

pub(crate) fn stable_hash(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn unit_hash(parts: &[&str]) -> f64 {
    (stable_hash(parts) >> 11) as f64 / (1u64 << 53) as f64
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn jaccard_sets(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Jaccard similarity of lowercase word sets.
pub fn jaccard_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    jaccard_sets(&tokens(a), &tokens(b))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Inverted index over lowercase word sets of the corpus.
struct TokenIndex {
    vocab: HashMap<String, u32>,
    sizes: Vec<usize>,
    postings: Vec<Vec<u32>>,
}

impl TokenIndex {
    fn new(corpus: &[Fact]) -> Self {
        let mut vocab = HashMap::new();
        let mut postings: Vec<Vec<u32>> = Vec::new();
        let mut sizes = Vec::with_capacity(corpus.len());
        for (i, f) in corpus.iter().enumerate() {
            let toks = tokens(&f.text);
            sizes.push(toks.len());
            for t in toks {
                let next = vocab.len() as u32;
                let id = *vocab.entry(t).or_insert(next);
                if id as usize == postings.len() {
                    postings.push(Vec::new());
                }
                postings[id as usize].push(i as u32);
            }
        }
        Self { vocab, sizes, postings }
    }

    /// Jaccard similarity of `query` with every fact, in corpus order.
    fn jaccard_all(&self, query: &str) -> Vec<f64> {
        let q = tokens(query);
        let mut shared = vec![0u32; self.sizes.len()];
        for t in &q {
            if let Some(&id) = self.vocab.get(t) {
                for &f in &self.postings[id as usize] {
                    shared[f as usize] += 1;
                }
            }
        }
        shared
            .iter()
            .zip(&self.sizes)
            .map(|(&c, &size)| {
                let union = q.len() + size - c as usize;
                if union == 0 {
                    1.0
                } else {
                    c as f64 / union as f64
                }
            })
            .collect()
    }
}

fn premise_key(premises: &[String]) -> String {
    let mut sorted: Vec<&str> = premises.iter().map(|p| p.trim()).collect();
    sorted.sort_unstable();
    sorted.join("\u{1f}")
}

/// A gold or decoy derivation in text form.
#[derive(Debug, Clone)]
pub(crate) struct Reference {
    pub steps: Vec<RefStep>,
    pub leaf_texts: Vec<String>,
    /// Prior given to `End: proved` once every step is done.
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct RefStep {
    pub premise_texts: Vec<String>,
    pub conclusion_text: String,
}

impl Reference {
    pub(crate) fn from_tree(tree: &EntailmentTree, confidence: f64) -> Self {
        let steps = tree
            .tree
            .steps()
            .iter()
            .map(|s| RefStep {
                premise_texts: s
                    .premises
                    .iter()
                    .map(|p| tree.text_of(*p).unwrap_or_default().to_string())
                    .collect(),
                conclusion_text: s.conclusion_text.clone(),
            })
            .collect();
        Self {
            steps,
            leaf_texts: tree
                .tree
                .leaves()
                .iter()
                .filter_map(|l| tree.text_of(*l).map(str::to_string))
                .collect(),
            confidence,
        }
    }
}

/// The behavior-cloning rules, evaluated in order against a gold (or decoy) derivation:
/// end when H is in X, entail when the next step's premises are all in X, otherwise
/// retrieve with the query that brings the most leaves into X.
///
/// `page_for` gives the page a query would fetch; `retrieve` runs the retriever.
type Retrieve<'a> = dyn Fn(&str, usize, usize) -> Result<Vec<Fact>, AdapterError> + 'a;

pub(crate) fn reference_action(
    hypothesis: &str,
    context: &[(SentenceRef, String)],
    reference: &Reference,
    config: &EnvConfig,
    page_for: &dyn Fn(&str) -> usize,
    retrieve: &Retrieve<'_>,
) -> Result<(Action, f64), AdapterError> {
    let in_x = |text: &str| context.iter().any(|(_, t)| t == text);
    if in_x(hypothesis) {
        return Ok((Action::end(true), reference.confidence));
    }
    match reference
        .steps
        .iter()
        .find(|s| !in_x(&s.conclusion_text))
    {
        None => return Ok((Action::end(true), reference.confidence)),
        Some(next) => {
            let refs: Option<Vec<SentenceRef>> = next
                .premise_texts
                .iter()
                .map(|t| context.iter().find(|(_, x)| x == t).map(|(r, _)| *r))
                .collect();
            if let Some(refs) = refs {
                return Ok((Action::entail(refs), 1.0));
            }
        }
    }
    let mut best: Option<(Query, usize)> = None;
    let candidates = std::iter::once((Query::Hypothesis, hypothesis))
        .chain(context.iter().map(|(r, t)| (Query::Sentence(*r), t.as_str())));
    for (query, text) in candidates {
        let facts = retrieve(text, config.retrieve_k, page_for(text))?;
        let sent_query = match query {
            Query::Sentence(r) if r.is_sent() => Some((r, text.to_string())),
            _ => None,
        };
        let updated = retrieval_texts(context, sent_query.as_ref(), &facts, config.max_premises);
        let count = reference
            .leaf_texts
            .iter()
            .filter(|leaf| updated.iter().any(|(_, t)| t == *leaf))
            .count();
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((query, count));
        }
        // later queries can only tie, and ties go to the earlier one
        if count == reference.leaf_texts.len() {
            break;
        }
    }
    let (query, _) = best.expect("hypothesis is always a candidate query");
    Ok((Action::retrieve(query), 1.0))
}

pub(crate) struct OracleData {
    corpus: Vec<Fact>,
    index: TokenIndex,
    /// Fixed page-0 prefixes for gold and decoy hypotheses.
    pinned: HashMap<String, Vec<usize>>,
    references: HashMap<String, Reference>,
    /// Misleading fact text keyed by gold hypothesis.
    misleading: HashMap<String, String>,
    steps: HashMap<String, Vec<(String, ReasoningType)>>,
    rankings: Mutex<HashMap<String, Arc<Vec<usize>>>>,
    noise: OracleNoise,
    env: EnvConfig,
}

impl OracleData {
    fn new(bank: &GoldBank, corpus: &[Fact], noise: OracleNoise, env: EnvConfig) -> Result<Self, BankError> {
        bank.validate(corpus)?;
        let index: HashMap<&str, usize> = corpus
            .iter()
            .enumerate()
            .map(|(i, f)| (f.id.as_str(), i))
            .collect();
        let mut pinned = HashMap::new();
        let mut references = HashMap::new();
        let mut misleading = HashMap::new();
        let mut steps: HashMap<String, Vec<(String, ReasoningType)>> = HashMap::new();
        let mut add_steps = |tree: &EntailmentTree| {
            for s in tree.tree.steps() {
                let premises: Vec<String> = s
                    .premises
                    .iter()
                    .map(|p| tree.text_of(*p).unwrap_or_default().to_string())
                    .collect();
                let kind = ReasoningType::ALL
                    [(stable_hash(&[&s.conclusion_text]) % 3) as usize];
                steps
                    .entry(premise_key(&premises))
                    .or_default()
                    .push((s.conclusion_text.clone(), kind));
            }
        };
        for e in &bank.entries {
            let ids = |list: &[String]| -> Vec<usize> {
                list.iter().filter_map(|id| index.get(id.as_str()).copied()).collect()
            };
            let mut prefix = ids(&e.leaf_ids);
            for d in ids(&e.distractor_ids) {
                if !prefix.contains(&d) {
                    prefix.push(d);
                }
            }
            pinned.insert(e.hypothesis().to_string(), prefix);
            references.insert(
                e.hypothesis().to_string(),
                Reference::from_tree(&e.gold, 1.0),
            );
            add_steps(&e.gold);
            if let Some(m) = &e.misleading_id {
                misleading.insert(e.hypothesis().to_string(), corpus[index[m.as_str()]].text.clone());
            }
            for d in &e.decoys {
                let h = e.hypotheses[d.option_index].clone();
                pinned.insert(h.clone(), ids(&d.leaf_ids));
                references.insert(
                    h,
                    Reference::from_tree(&d.tree, d.confidence),
                );
                add_steps(&d.tree);
            }
        }
        Ok(Self {
            index: TokenIndex::new(corpus),
            corpus: corpus.to_vec(),
            pinned,
            references,
            misleading,
            steps,
            rankings: Mutex::new(HashMap::new()),
            noise,
            env,
        })
    }

    /// The first `len` facts of the ranking for `query` (fewer if the corpus is smaller).
    fn ranking(&self, query: &str, len: usize) -> Arc<Vec<usize>> {
        if let Some(r) = self.rankings.lock().expect("ranking lock").get(query) {
            if r.len() >= len.min(self.corpus.len()) {
                return r.clone();
            }
        }
        let mut order: Vec<usize> = self.pinned.get(query).cloned().unwrap_or_default();
        let pinned: HashSet<usize> = order.iter().copied().collect();
        let scores = self.index.jaccard_all(query);
        let salt = fnv1a(query.as_bytes());
        let mut rest: Vec<(f64, u64, usize)> = scores
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !pinned.contains(i))
            .map(|(i, j)| (j, splitmix64(salt ^ i as u64), i))
            .collect();
        let cmp = |a: &(f64, u64, usize), b: &(f64, u64, usize)| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        // rank at least a few pages so scroll-downs rarely recompute
        let want = len.max(4 * self.env.retrieve_k).saturating_sub(order.len());
        if want < rest.len() {
            if want > 0 {
                rest.select_nth_unstable_by(want - 1, cmp);
            }
            rest.truncate(want);
        }
        rest.sort_unstable_by(cmp);
        order.extend(rest.into_iter().map(|(_, _, i)| i));
        let order = Arc::new(order);
        self.rankings
            .lock()
            .expect("ranking lock")
            .insert(query.to_string(), order.clone());
        order
    }

    fn retrieve(&self, query: &str, k: usize, page: usize) -> Vec<Fact> {
        if k == 0 {
            return Vec::new();
        }
        let start = page.saturating_mul(k);
        let ranking = self.ranking(query, start.saturating_add(k));
        ranking
            .iter()
            .skip(start)
            .take(k)
            .map(|&i| self.corpus[i].clone())
            .collect()
    }

    fn raw_step_score(&self, premises: &[String], conclusion: &str) -> f64 {
        let conclusion = conclusion.trim();
        if premises.len() == 1 && premises[0].trim() == conclusion {
            return 1.0;
        }
        let known = self
            .steps
            .get(&premise_key(premises))
            .is_some_and(|cs| cs.iter().any(|(c, _)| c == conclusion));
        if known {
            1.0
        } else {
            0.0
        }
    }

    fn flipped(&self, premises: &[String], conclusion: &str) -> bool {
        if self.noise.step_flip_prob <= 0.0 {
            return false;
        }
        let seed = self.noise.seed.to_string();
        let key = premise_key(premises);
        unit_hash(&["flip", &seed, &key, conclusion.trim()]) < self.noise.step_flip_prob
    }

    fn predict(&self, view: &StateView, n: usize) -> Result<Vec<(Action, f64)>, AdapterError> {
        let reference = self.references.get(&view.hypothesis);
        let retrieve = |q: &str, k: usize, p: usize| Ok(self.retrieve(q, k, p));
        let (primary, mut primary_score) = match reference {
            Some(r) => reference_action(
                &view.hypothesis,
                &view.context,
                r,
                &self.env,
                &|_| 0,
                &retrieve,
            )?,
            None => (Action::end(false), 1.0),
        };
        let mut scored: Vec<(Action, f64)> = Vec::new();
        if let (Some(r), Some(decoy)) = (reference, self.misleading.get(&view.hypothesis)) {
            let all_leaves = r
                .leaf_texts
                .iter()
                .all(|l| view.context.iter().any(|(_, t)| t == l));
            let decoy_ref = view.context.iter().find(|(_, t)| t == decoy).map(|(r, _)| *r);
            if let (true, true, Some(d)) = (view.steps.is_empty(), all_leaves, decoy_ref) {
                scored.push((Action::retrieve(Query::Sentence(d)), 1.0));
                primary_score = primary_score.min(MISLED_REFERENCE);
            }
        }
        scored.push((primary.clone(), primary_score));

        let next_premises: Option<BTreeSet<SentenceRef>> = match &primary {
            Action::Entail { premises } => Some(premises.iter().copied().collect()),
            _ => None,
        };
        let x = &view.context;
        'pairs: for i in 0..x.len() {
            for j in i + 1..x.len() {
                let pair: BTreeSet<SentenceRef> = [x[i].0, x[j].0].into_iter().collect();
                if Some(&pair) != next_premises.as_ref() {
                    scored.push((Action::entail([x[i].0, x[j].0]), ALT_ENTAIL));
                    break 'pairs;
                }
            }
        }
        scored.push((Action::end(false), ALT_END_UNPROVED));
        let alt_query = if primary == Action::retrieve(Query::Hypothesis) {
            x.iter().find(|(r, _)| r.is_sent()).map(|(r, _)| Query::Sentence(*r))
        } else {
            Some(Query::Hypothesis)
        };
        if let Some(q) = alt_query {
            scored.push((Action::retrieve(q), ALT_RETRIEVE));
        }
        scored.push((Action::end(true), ALT_END_PROVED));

        let mut out = normalize_candidates(scored, n);
        if let Some(t) = self.noise.prior_temperature {
            let max = out.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = out.iter().map(|c| ((c.1 - max) / t).exp()).collect();
            let total: f64 = weights.iter().sum();
            for (c, w) in out.iter_mut().zip(weights) {
                c.1 = w / total;
            }
        }
        Ok(out)
    }
}

struct OracleController(Arc<OracleData>);
struct OracleRetriever(Arc<OracleData>);
struct OracleEntailment(Arc<OracleData>);
struct OracleStepVerifier(Arc<OracleData>);
struct OracleSimilarity;

impl Controller for OracleController {
    fn predict(&self, state_text: &str, n: usize) -> Result<Vec<(Action, f64)>, AdapterError> {
        let view = parse_state_text(state_text)
            .map_err(|e| AdapterError::Oracle(format!("unreadable state: {e}")))?;
        self.0.predict(&view, n.max(1))
    }
}

impl Retriever for OracleRetriever {
    fn retrieve(&self, query: &str, k: usize, page: usize) -> Result<Vec<Fact>, AdapterError> {
        Ok(self.0.retrieve(query, k, page))
    }
}

impl Entailment for OracleEntailment {
    fn generate(
        &self,
        premises: &[String],
        _hypothesis: &str,
        kind: ReasoningType,
    ) -> Result<String, AdapterError> {
        if let Some(conclusions) = self.0.steps.get(&premise_key(premises)) {
            if let Some((c, _)) = conclusions.iter().find(|(_, k)| *k == kind) {
                return Ok(c.clone());
            }
        }
        Ok(format!("and({})", premises.join("; ")))
    }
}

impl StepVerifier for OracleStepVerifier {
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, AdapterError> {
        let raw = self.0.raw_step_score(premises, conclusion);
        Ok(if self.0.flipped(premises, conclusion) {
            1.0 - raw
        } else {
            raw
        })
    }
}

impl Similarity for OracleSimilarity {
    fn score(&self, a: &str, b: &str) -> Result<f64, AdapterError> {
        Ok(jaccard_similarity(a, b))
    }
}

/// Oracle suite using the default environment profile for the controller's look-ahead.
pub fn build_oracle_suite(
    bank: &GoldBank,
    corpus: &[Fact],
    noise: OracleNoise,
) -> Result<AdapterSuite, BankError> {
    build_oracle_suite_for_env(bank, corpus, noise, EnvConfig::default())
}

pub fn build_oracle_suite_for_env(
    bank: &GoldBank,
    corpus: &[Fact],
    noise: OracleNoise,
    env: EnvConfig,
) -> Result<AdapterSuite, BankError> {
    let data = Arc::new(OracleData::new(bank, corpus, noise, env)?);
    Ok(AdapterSuite::new(
        Arc::new(OracleController(data.clone())),
        Arc::new(OracleRetriever(data.clone())),
        Arc::new(OracleEntailment(data.clone())),
        Arc::new(OracleStepVerifier(data)),
        Arc::new(OracleSimilarity),
    ))
}
