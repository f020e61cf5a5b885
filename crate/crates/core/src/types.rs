//! Domain types shared by every module.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Absolute tolerance used when comparing scores.
pub const SCORE_EPS: f64 = 1e-9;

/// Maximum number of candidate premises in a state.
pub const DEFAULT_MAX_PREMISES: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub id: String,
    pub text: String,
}

impl Fact {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RefKind {
    /// A fact retrieved from the corpus.
    Sent,
    /// A conclusion generated by an entailment step.
    Int,
}

/// Label of a sentence inside a state: `sent<k>` or `int<k>`, `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentenceRef {
    pub kind: RefKind,
    pub index: u32,
}

impl SentenceRef {
    pub fn sent(index: u32) -> Self {
        debug_assert!(index >= 1);
        Self {
            kind: RefKind::Sent,
            index,
        }
    }

    pub fn int(index: u32) -> Self {
        debug_assert!(index >= 1);
        Self {
            kind: RefKind::Int,
            index,
        }
    }

    pub fn is_int(&self) -> bool {
        self.kind == RefKind::Int
    }

    pub fn is_sent(&self) -> bool {
        self.kind == RefKind::Sent
    }
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RefKind::Sent => write!(f, "sent{}", self.index),
            RefKind::Int => write!(f, "int{}", self.index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid sentence reference `{0}`")]
pub struct RefParseError(pub String);

impl FromStr for SentenceRef {
    type Err = RefParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (kind, digits) = if let Some(rest) = s.strip_prefix("sent") {
            (RefKind::Sent, rest)
        } else if let Some(rest) = s.strip_prefix("int") {
            (RefKind::Int, rest)
        } else {
            return Err(RefParseError(s.to_string()));
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(RefParseError(s.to_string()));
        }
        let index: u32 = digits.parse().map_err(|_| RefParseError(s.to_string()))?;
        if index == 0 {
            return Err(RefParseError(s.to_string()));
        }
        Ok(Self { kind, index })
    }
}

impl Serialize for SentenceRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SentenceRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One multi-premise entailment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub premises: Vec<SentenceRef>,
    pub conclusion: SentenceRef,
    pub conclusion_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity: Option<f64>,
}

impl Step {
    pub fn new(
        premises: Vec<SentenceRef>,
        conclusion: SentenceRef,
        conclusion_text: impl Into<String>,
    ) -> Self {
        Self {
            premises,
            conclusion,
            conclusion_text: conclusion_text.into(),
            validity: None,
        }
    }

    fn check_shape(&self) -> Result<(), TreeError> {
        if !self.conclusion.is_int() {
            return Err(TreeError::ConclusionNotInt(self.conclusion));
        }
        if self.premises.len() < 2 {
            return Err(TreeError::TooFewPremises(self.conclusion));
        }
        let mut seen = BTreeSet::new();
        for p in &self.premises {
            if *p == self.conclusion {
                return Err(TreeError::SelfPremise(self.conclusion));
            }
            if !seen.insert(*p) {
                return Err(TreeError::DuplicatePremise(*p));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("step conclusion {0} is not an int reference")]
    ConclusionNotInt(SentenceRef),
    #[error("step concluding {0} has fewer than two premises")]
    TooFewPremises(SentenceRef),
    #[error("step concluding {0} lists itself as a premise")]
    SelfPremise(SentenceRef),
    #[error("premise {0} appears twice in one step")]
    DuplicatePremise(SentenceRef),
    #[error("{0} is produced by more than one step")]
    DuplicateProducer(SentenceRef),
    #[error("{0} is used as a premise but no step produces it")]
    MissingProducer(SentenceRef),
    #[error("steps contain a cycle through {0}")]
    Cycle(SentenceRef),
    #[error("tree has no steps")]
    Empty,
    #[error("{0} is not a conclusion of this tree")]
    UnknownRoot(SentenceRef),
}

/// Ordered list of entailment steps forming an acyclic graph.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PartialTree {
    steps: Vec<Step>,
}

impl<'de> Deserialize<'de> for PartialTree {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            steps: Vec<Step>,
        }
        let raw = Raw::deserialize(deserializer)?;
        PartialTree::new(raw.steps).map_err(serde::de::Error::custom)
    }
}

impl PartialTree {
    pub fn new(steps: Vec<Step>) -> Result<Self, TreeError> {
        let tree = Self { steps };
        tree.validate()?;
        Ok(tree)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn into_steps(self) -> Vec<Step> {
        self.steps
    }

    /// Appends a step, rejecting it if the result would violate any tree invariant.
    pub fn push(&mut self, step: Step) -> Result<(), TreeError> {
        self.steps.push(step);
        if let Err(e) = self.validate() {
            self.steps.pop();
            return Err(e);
        }
        Ok(())
    }

    /// Checks whether `step` could be appended without breaking an invariant.
    pub fn accepts(&self, step: &Step) -> Result<(), TreeError> {
        let mut steps = self.steps.clone();
        steps.push(step.clone());
        Self { steps }.validate()
    }

    pub fn step_for(&self, conclusion: SentenceRef) -> Option<&Step> {
        self.steps.iter().find(|s| s.conclusion == conclusion)
    }

    pub fn step_for_mut(&mut self, conclusion: SentenceRef) -> Option<&mut Step> {
        self.steps.iter_mut().find(|s| s.conclusion == conclusion)
    }

    /// Conclusions not consumed by any other step, in step order.
    pub fn roots(&self) -> Vec<SentenceRef> {
        let consumed: BTreeSet<SentenceRef> = self
            .steps
            .iter()
            .flat_map(|s| s.premises.iter().copied())
            .collect();
        self.steps
            .iter()
            .map(|s| s.conclusion)
            .filter(|c| !consumed.contains(c))
            .collect()
    }

    /// Every `sent` reference used as a premise, in first-use order.
    pub fn leaves(&self) -> Vec<SentenceRef> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.steps {
            for p in &s.premises {
                if p.is_sent() && seen.insert(*p) {
                    out.push(*p);
                }
            }
        }
        out
    }

    /// The sub-tree rooted at `root`: the root's step and all its ancestors, in original order.
    pub fn subtree(&self, root: SentenceRef) -> Result<PartialTree, TreeError> {
        if self.step_for(root).is_none() {
            return Err(TreeError::UnknownRoot(root));
        }
        let mut keep = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            if !keep.insert(node) {
                continue;
            }
            if let Some(step) = self.step_for(node) {
                stack.extend(step.premises.iter().filter(|p| p.is_int()).copied());
            }
        }
        let steps = self
            .steps
            .iter()
            .filter(|s| keep.contains(&s.conclusion))
            .cloned()
            .collect();
        Ok(PartialTree { steps })
    }

    /// Leaf references below `node` (the node itself when it is a leaf).
    pub fn descendant_leaves(&self, node: SentenceRef) -> BTreeSet<SentenceRef> {
        let mut out = BTreeSet::new();
        let mut stack = vec![node];
        let mut visited = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if !visited.insert(n) {
                continue;
            }
            if n.is_sent() {
                out.insert(n);
            } else if let Some(step) = self.step_for(n) {
                stack.extend(step.premises.iter().copied());
            }
        }
        out
    }

    /// Topological order of conclusions (producers before consumers).
    pub fn topological_order(&self) -> Result<Vec<SentenceRef>, TreeError> {
        let producer: HashMap<SentenceRef, usize> = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| (s.conclusion, i))
            .collect();
        let mut indegree = vec![0usize; self.steps.len()];
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); self.steps.len()];
        for (i, s) in self.steps.iter().enumerate() {
            for p in s.premises.iter().filter(|p| p.is_int()) {
                if let Some(&j) = producer.get(p) {
                    indegree[i] += 1;
                    consumers[j].push(i);
                }
            }
        }
        let mut ready: Vec<usize> = (0..self.steps.len())
            .filter(|&i| indegree[i] == 0)
            .rev()
            .collect();
        let mut order = Vec::with_capacity(self.steps.len());
        while let Some(i) = ready.pop() {
            order.push(self.steps[i].conclusion);
            for &c in consumers[i].iter().rev() {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }
        if order.len() != self.steps.len() {
            let stuck = (0..self.steps.len())
                .find(|&i| indegree[i] > 0)
                .map(|i| self.steps[i].conclusion)
                .expect("unsorted step exists");
            return Err(TreeError::Cycle(stuck));
        }
        Ok(order)
    }

    fn validate(&self) -> Result<(), TreeError> {
        let mut produced = BTreeSet::new();
        for s in &self.steps {
            s.check_shape()?;
            if !produced.insert(s.conclusion) {
                return Err(TreeError::DuplicateProducer(s.conclusion));
            }
        }
        for s in &self.steps {
            for p in s.premises.iter().filter(|p| p.is_int()) {
                if !produced.contains(p) {
                    return Err(TreeError::MissingProducer(*p));
                }
            }
        }
        self.topological_order().map(|_| ())
    }
}

/// A partial tree together with the texts of its leaf sentences.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EntailmentTree {
    pub tree: PartialTree,
    pub leaf_texts: BTreeMap<SentenceRef, String>,
}

impl EntailmentTree {
    pub fn text_of(&self, r: SentenceRef) -> Option<&str> {
        match r.kind {
            RefKind::Sent => self.leaf_texts.get(&r).map(String::as_str),
            RefKind::Int => self.tree.step_for(r).map(|s| s.conclusion_text.as_str()),
        }
    }
}

/// Query of a `Retrieve` action: the hypothesis or a sentence of X.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Query {
    Hypothesis,
    Sentence(SentenceRef),
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Hypothesis => f.write_str("hypothesis"),
            Query::Sentence(r) => r.fmt(f),
        }
    }
}

impl FromStr for Query {
    type Err = RefParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "hypothesis" {
            Ok(Query::Hypothesis)
        } else {
            s.parse().map(Query::Sentence)
        }
    }
}

impl Serialize for Query {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Query {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A controller action. Renders as `Retrieve: <query>`, `Entail: a & b`, `End: proved|unproved`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Retrieve { query: Query },
    Entail { premises: Vec<SentenceRef> },
    End { proved: bool },
}

impl Action {
    pub fn retrieve(query: Query) -> Self {
        Action::Retrieve { query }
    }

    pub fn entail(premises: impl IntoIterator<Item = SentenceRef>) -> Self {
        Action::Entail {
            premises: premises.into_iter().collect(),
        }
    }

    pub fn end(proved: bool) -> Self {
        Action::End { proved }
    }

    pub fn is_end(&self) -> bool {
        matches!(self, Action::End { .. })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Retrieve { query } => write!(f, "Retrieve: {query}"),
            Action::Entail { premises } => {
                f.write_str("Entail: ")?;
                for (i, p) in premises.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" & ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
            Action::End { proved: true } => f.write_str("End: proved"),
            Action::End { proved: false } => f.write_str("End: unproved"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("ill-formed action `{0}`")]
pub struct ActionParseError(pub String);

impl FromStr for Action {
    type Err = ActionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ActionParseError(s.to_string());
        let (verb, arg) = s.split_once(':').ok_or_else(bad)?;
        let arg = arg.trim();
        match verb.trim() {
            "Retrieve" => arg
                .parse::<Query>()
                .map(Action::retrieve)
                .map_err(|_| bad()),
            "Entail" => {
                let premises = arg
                    .split('&')
                    .map(|p| p.parse::<SentenceRef>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad())?;
                if premises.len() < 2 {
                    return Err(bad());
                }
                Ok(Action::Entail { premises })
            }
            "End" => match arg {
                "proved" => Ok(Action::end(true)),
                "unproved" => Ok(Action::end(false)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

/// The environment state `{H, T_p, X}` plus bookkeeping.
///
/// `sentences` is the registry of every fact text that has entered X on this path;
/// `sent<k>` always names `sentences[k-1]`, so steps stay resolvable after X is replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningState {
    pub hypothesis: String,
    pub question: String,
    pub option: String,
    pub tree: PartialTree,
    pub premises: Vec<(SentenceRef, String)>,
    pub sentences: Vec<String>,
    pub retrieval_counts: BTreeMap<String, u32>,
    pub actions_used: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended: Option<bool>,
}

impl ReasoningState {
    pub fn is_terminal(&self) -> bool {
        self.ended.is_some()
    }

    /// Text of a reference, looked up in the sentence registry or the tree.
    pub fn resolve(&self, r: SentenceRef) -> Option<&str> {
        match r.kind {
            RefKind::Sent => self
                .sentences
                .get(r.index as usize - 1)
                .map(String::as_str),
            RefKind::Int => self.tree.step_for(r).map(|s| s.conclusion_text.as_str()),
        }
    }

    pub fn in_premises(&self, r: SentenceRef) -> bool {
        self.premises.iter().any(|(p, _)| *p == r)
    }

    pub fn premise_text(&self, r: SentenceRef) -> Option<&str> {
        self.premises
            .iter()
            .find(|(p, _)| *p == r)
            .map(|(_, t)| t.as_str())
    }

    pub fn next_int(&self) -> SentenceRef {
        SentenceRef::int(self.tree.len() as u32 + 1)
    }

    /// The tree as an [`EntailmentTree`] with leaf texts resolved.
    pub fn entailment_tree(&self) -> EntailmentTree {
        self.with_leaf_texts(self.tree.clone())
    }

    pub fn with_leaf_texts(&self, tree: PartialTree) -> EntailmentTree {
        let leaf_texts = tree
            .leaves()
            .into_iter()
            .filter_map(|r| self.resolve(r).map(|t| (r, t.to_string())))
            .collect();
        EntailmentTree { tree, leaf_texts }
    }
}

/// Ordered `(state, action)` pairs of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pairs: Vec<(ReasoningState, Action)>,
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredOption {
    pub option_index: usize,
    pub score: f64,
    pub best_state: ReasoningState,
    pub extracted_tree: EntailmentTree,
}
