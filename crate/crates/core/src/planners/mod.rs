//! Monte-Carlo planning, the greedy / overgenerate-and-filter / beam baselines, and
//! option selection.

mod answer;
mod baselines;
mod mcp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::AdapterError;
use crate::environment::{EnvError, Environment};
use crate::linearize::{linearize_state, LinearizeError};
use crate::types::{Action, ReasoningState, Trajectory, SCORE_EPS};
use crate::verifier::{StateScore, VerifierError};

pub use answer::{answer, plan, Answer};
pub use baselines::{beam_plan, greedy_plan, oaf_plan};
pub use mcp::{mcp_plan, McpPlanner, PlanNode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("state verifier: {0}")]
    Verifier(#[from] VerifierError),
    #[error("controller: {0}")]
    Controller(#[from] AdapterError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error("need at least two options, got {0}")]
    TooFewOptions(usize),
}

impl PlanError {
    /// True when the failure came from an adapter rather than from the inputs.
    pub fn is_adapter(&self) -> bool {
        match self {
            PlanError::Env(e) => e.is_adapter(),
            PlanError::Verifier(VerifierError::Adapter(_)) | PlanError::Controller(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Mcp,
    Greedy,
    Oaf,
    Beam,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 4] = [
        PlannerKind::Mcp,
        PlannerKind::Greedy,
        PlannerKind::Oaf,
        PlannerKind::Beam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Mcp => "mcp",
            PlannerKind::Greedy => "greedy",
            PlannerKind::Oaf => "oaf",
            PlannerKind::Beam => "beam",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mcp" => Ok(PlannerKind::Mcp),
            "greedy" => Ok(PlannerKind::Greedy),
            "oaf" | "overgenerate_filter" => Ok(PlannerKind::Oaf),
            "beam" => Ok(PlannerKind::Beam),
            other => Err(format!("unknown planner `{other}` (mcp, greedy, oaf, beam)")),
        }
    }
}

/// How the state used for option scoring is chosen after planning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BestState {
    /// Extra UCB walk from the root.
    #[default]
    Walk,
    /// Highest-valued non-terminal node anywhere in the search tree.
    MaxValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub c_p: f64,
    pub budget: u32,
    pub candidates_per_state: usize,
    pub beam_width: usize,
    /// Zero the exploration term during the final walk.
    pub exploit_final: bool,
    pub best_state: BestState,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            c_p: 0.2,
            budget: 30,
            candidates_per_state: 5,
            beam_width: 3,
            exploit_final: false,
            best_state: BestState::Walk,
        }
    }
}

/// Per-action statistics of a planning node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub action: Action,
    pub prior: f64,
    pub q: f64,
    pub n: u32,
    /// Arena index of the expanded child.
    pub child: Option<usize>,
}

impl EdgeStats {
    pub fn new(action: Action, prior: f64) -> Self {
        Self {
            action,
            prior,
            q: 0.0,
            n: 0,
            child: None,
        }
    }
}

/// One simulation (MCP) or one decision step (baselines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub path: Vec<String>,
    pub expanded: Option<String>,
    pub value: f64,
    pub applies: u32,
    pub verifier_calls: u32,
    pub controller_calls: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub planner: PlannerKind,
    pub best_state: ReasoningState,
    pub best_score: StateScore,
    pub end_proved_prior: f64,
    pub option_score: f64,
    pub simulations_run: u32,
    pub actions_used: u32,
    pub trace: Vec<SimulationRecord>,
    /// States and actions from the root to the best state, ending with the action chosen there.
    pub trajectory: Trajectory,
}

impl PlanResult {
    pub fn total_applies(&self) -> u32 {
        self.trace.iter().map(|r| r.applies).sum()
    }
}

/// Selection score `Q + c_p * P * sqrt(sum N) / (1 + N)`.
pub fn ucb(edge: &EdgeStats, total_n: u32, c_p: f64) -> f64 {
    edge.q + c_p * edge.prior * (total_n as f64).sqrt() / (1.0 + edge.n as f64)
}

/// Index of the edge maximizing [`ucb`]; ties go to the higher prior, then to the
/// lexicographically smaller action text.
pub fn ucb_select(edges: &[EdgeStats], c_p: f64) -> Option<usize> {
    ucb_select_where(edges, c_p, |_| true)
}

/// [`ucb_select`] restricted to edges passing `allowed`. Visit counts of every edge still
/// enter the exploration term.
pub fn ucb_select_where(edges: &[EdgeStats], c_p: f64, allowed: impl Fn(&EdgeStats) -> bool) -> Option<usize> {
    let total: u32 = edges.iter().map(|e| e.n).sum();
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in edges.iter().enumerate() {
        if !allowed(e) {
            continue;
        }
        let u = ucb(e, total, c_p);
        let replace = match best {
            None => true,
            Some((b, bu)) => {
                if u > bu + SCORE_EPS {
                    true
                } else if (u - bu).abs() <= SCORE_EPS {
                    let bp = edges[b].prior;
                    e.prior > bp + SCORE_EPS
                        || ((e.prior - bp).abs() <= SCORE_EPS
                            && e.action.to_string() < edges[b].action.to_string())
                } else {
                    false
                }
            }
        };
        if replace {
            best = Some((i, u));
        }
    }
    best.map(|(i, _)| i)
}

/// Running-average update `Q <- (N*Q + G)/(N+1)`, `N <- N+1`.
pub fn running_update(edge: &mut EdgeStats, g: f64) {
    let n = edge.n as f64;
    edge.q = (n * edge.q + g) / (n + 1.0);
    edge.n += 1;
}

/// Soft disjunction over a node's actions.
pub fn max_q(edges: &[EdgeStats]) -> f64 {
    edges.iter().map(|e| e.q).fold(0.0, f64::max)
}

/// Prior of `End: proved` among `edges`, or 0.
pub fn end_proved_prior<'a>(candidates: impl IntoIterator<Item = (&'a Action, f64)>) -> f64 {
    candidates
        .into_iter()
        .find(|(a, _)| **a == Action::end(true))
        .map_or(0.0, |(_, p)| p)
}

/// Controller proposals for `state` after filtering.
pub(crate) fn propose(
    env: &Environment,
    state: &ReasoningState,
    n: usize,
) -> Result<Vec<(Action, f64)>, PlanError> {
    if state.is_terminal() {
        return Ok(Vec::new());
    }
    let text = linearize_state(state)?;
    let raw = env.adapters.controller.predict(&text, n)?;
    Ok(env.filter_actions(state, raw))
}

/// Highest prior, ties to the smaller action text.
pub(crate) fn max_prior(candidates: &[(Action, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (a, p)) in candidates.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let (ba, bp) = &candidates[b];
                if *p > bp + SCORE_EPS
                    || ((p - bp).abs() <= SCORE_EPS && a.to_string() < ba.to_string())
                {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Query, SentenceRef};

    fn edge(action: Action, q: f64, p: f64, n: u32) -> EdgeStats {
        EdgeStats {
            action,
            prior: p,
            q,
            n,
            child: None,
        }
    }

    #[test]
    fn fresh_node_picks_highest_prior() {
        let edges = vec![
            edge(Action::end(false), 0.0, 0.3, 0),
            edge(Action::retrieve(Query::Hypothesis), 0.0, 0.9, 0),
            edge(Action::end(true), 0.0, 0.9, 0),
        ];
        // equal priors break on action text: "End: proved" < "Retrieve: hypothesis"
        assert_eq!(ucb_select(&edges, 0.2), Some(2));
        assert_eq!(ucb_select(&[], 0.2), None);
    }

    #[test]
    fn hand_computed_selection() {
        let a = edge(Action::end(true), 0.5, 0.2, 3);
        let b = edge(
            Action::entail([SentenceRef::sent(1), SentenceRef::sent(2)]),
            0.0,
            0.9,
            0,
        );
        let expected_a = 0.5 + 0.2 * 0.2 * 3f64.sqrt() / 4.0;
        let expected_b = 0.2 * 0.9 * 3f64.sqrt();
        assert!((ucb(&a, 3, 0.2) - expected_a).abs() < 1e-12);
        assert!((ucb(&b, 3, 0.2) - expected_b).abs() < 1e-12);
        assert_eq!(ucb_select(&[a, b], 0.2), Some(0));
    }

    #[test]
    fn running_average_and_max() {
        let mut e = edge(Action::end(true), 0.0, 0.5, 0);
        running_update(&mut e, 0.6);
        assert_eq!(e.q, 0.6);
        running_update(&mut e, 1.0);
        assert!((e.q - 0.8).abs() < 1e-12);
        assert_eq!(e.n, 2);
        let children = vec![edge(Action::end(true), 0.2, 0.1, 1), edge(Action::end(false), 0.9, 0.1, 1)];
        assert_eq!(max_q(&children), 0.9);
    }

    #[test]
    fn planner_names_round_trip() {
        for k in PlannerKind::ALL {
            assert_eq!(k.as_str().parse::<PlannerKind>().unwrap(), k);
        }
        assert_eq!("overgenerate_filter".parse::<PlannerKind>().unwrap(), PlannerKind::Oaf);
        assert!("dfs".parse::<PlannerKind>().is_err());
    }
}
