use serde::{Deserialize, Serialize};

use super::{
    end_proved_prior, max_q, propose, running_update, ucb_select, ucb_select_where, BestState, EdgeStats,
    PlanConfig, PlanError, PlanResult, PlannerKind, SimulationRecord,
};
use crate::environment::{new_episode, EnvError, Environment};
use crate::types::{Action, ReasoningState, Trajectory};
use crate::verifier::{state_score, StateScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub state: ReasoningState,
    pub edges: Vec<EdgeStats>,
    pub score: StateScore,
    pub terminal: bool,
    /// Terminal, or every edge leads to a closed child. Selection never enters closed nodes.
    pub closed: bool,
    /// `(parent node, edge index)` that produced this node.
    pub parent: Option<(usize, usize)>,
}

/// Search tree of one hypothesis. Nodes live in an arena; index 0 is the root.
#[derive(Debug)]
pub struct McpPlanner<'a> {
    env: &'a Environment,
    config: PlanConfig,
    pub nodes: Vec<PlanNode>,
    pub trace: Vec<SimulationRecord>,
}

fn dead_end_edges(edges: Vec<(Action, f64)>) -> Vec<EdgeStats> {
    if edges.is_empty() {
        return vec![EdgeStats::new(Action::end(false), 0.0)];
    }
    edges.into_iter().map(|(a, p)| EdgeStats::new(a, p)).collect()
}

impl<'a> McpPlanner<'a> {
    /// Scores the root and asks the controller for its candidates.
    pub fn new(env: &'a Environment, config: PlanConfig, root: ReasoningState) -> Result<Self, PlanError> {
        let score = state_score(&root, &env.adapters)?;
        let edges = dead_end_edges(propose(env, &root, config.candidates_per_state)?);
        Ok(Self {
            env,
            config,
            nodes: vec![PlanNode {
                terminal: root.is_terminal(),
                closed: root.is_terminal(),
                state: root,
                edges,
                score,
                parent: None,
            }],
            trace: Vec::new(),
        })
    }

    pub fn simulations_run(&self) -> u32 {
        self.trace.len() as u32
    }

    pub fn run(&mut self) -> Result<(), PlanError> {
        while self.simulations_run() < self.config.budget && !self.nodes[0].closed {
            self.simulate()?;
        }
        Ok(())
    }

    /// Selection, expansion of one action, and back-propagation along the walked path.
    pub fn simulate(&mut self) -> Result<&SimulationRecord, PlanError> {
        let mut node = 0;
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut record = SimulationRecord {
            path: Vec::new(),
            expanded: None,
            value: 0.0,
            applies: 0,
            verifier_calls: 0,
            controller_calls: 0,
        };
        let value = loop {
            let nodes = &self.nodes;
            let idx = ucb_select_where(&nodes[node].edges, self.config.c_p, |e| {
                e.child.is_none_or(|c| !nodes[c].closed)
            })
            .expect("open nodes always carry an open edge");
            path.push((node, idx));
            let edge = &self.nodes[node].edges[idx];
            record.path.push(edge.action.to_string());
            match edge.child {
                Some(child) => node = child,
                None => {
                    let action = edge.action.clone();
                    record.expanded = Some(action.to_string());
                    let child = self.expand(node, idx, &action, &mut record)?;
                    break self.nodes[child].score.total;
                }
            }
        };
        record.value = value;
        self.backup(&path, value);
        self.close_upwards(&path);
        self.trace.push(record);
        Ok(self.trace.last().expect("just pushed"))
    }

    fn expand(
        &mut self,
        node: usize,
        edge: usize,
        action: &Action,
        record: &mut SimulationRecord,
    ) -> Result<usize, PlanError> {
        let parent = &self.nodes[node].state;
        record.applies += 1;
        let (state, score, edges) = match self.env.apply(parent, action) {
            Ok(state) => {
                record.verifier_calls += 1;
                let score = state_score(&state, &self.env.adapters)?;
                let edges = if state.is_terminal() {
                    Vec::new()
                } else {
                    record.controller_calls += 1;
                    dead_end_edges(propose(self.env, &state, self.config.candidates_per_state)?)
                };
                (state, score, edges)
            }
            // a step the modules cannot produce ends the branch with value 0
            Err(EnvError::InvalidStep { .. }) => {
                let mut state = parent.clone();
                state.ended = Some(false);
                state.actions_used += 1;
                (state, StateScore::default(), Vec::new())
            }
            Err(e) => return Err(e.into()),
        };
        let id = self.nodes.len();
        self.nodes.push(PlanNode {
            terminal: state.is_terminal(),
            closed: state.is_terminal(),
            state,
            edges,
            score,
            parent: Some((node, edge)),
        });
        self.nodes[node].edges[edge].child = Some(id);
        Ok(id)
    }

    fn backup(&mut self, path: &[(usize, usize)], value: f64) {
        let Some(&(last_node, last_edge)) = path.last() else {
            return;
        };
        let last = &mut self.nodes[last_node].edges[last_edge];
        last.q = value;
        last.n += 1;
        for k in (0..path.len() - 1).rev() {
            let child = path[k + 1].0;
            let g = max_q(&self.nodes[child].edges);
            let (n, e) = path[k];
            running_update(&mut self.nodes[n].edges[e], g);
        }
    }

    fn close_upwards(&mut self, path: &[(usize, usize)]) {
        for &(n, _) in path.iter().rev() {
            let nodes = &self.nodes;
            let done = nodes[n]
                .edges
                .iter()
                .all(|e| e.child.is_some_and(|c| nodes[c].closed));
            if !done {
                break;
            }
            self.nodes[n].closed = true;
        }
    }

    /// The node used for option scoring, the walked path, and the action chosen there.
    pub fn best_node(&self) -> (usize, Vec<(usize, usize)>, Option<usize>) {
        match self.config.best_state {
            BestState::Walk => self.walk(),
            BestState::MaxValue => {
                let mut best = 0;
                for (i, n) in self.nodes.iter().enumerate() {
                    if !n.terminal && n.score.total > self.nodes[best].score.total + crate::SCORE_EPS {
                        best = i;
                    }
                }
                let mut path = Vec::new();
                let mut at = best;
                while let Some((p, e)) = self.nodes[at].parent {
                    path.push((p, e));
                    at = p;
                }
                path.reverse();
                let c_p = if self.config.exploit_final { 0.0 } else { self.config.c_p };
                (best, path, ucb_select(&self.nodes[best].edges, c_p))
            }
        }
    }

    fn walk(&self) -> (usize, Vec<(usize, usize)>, Option<usize>) {
        let c_p = if self.config.exploit_final { 0.0 } else { self.config.c_p };
        let mut node = 0;
        let mut path = Vec::new();
        loop {
            let Some(idx) = ucb_select(&self.nodes[node].edges, c_p) else {
                return (node, path, None);
            };
            let edge = &self.nodes[node].edges[idx];
            match edge.child {
                Some(child) if !edge.action.is_end() && !self.nodes[child].terminal => {
                    path.push((node, idx));
                    node = child;
                }
                _ => return (node, path, Some(idx)),
            }
        }
    }

    pub fn result(&self) -> PlanResult {
        let (best, path, final_edge) = self.best_node();
        let node = &self.nodes[best];
        let mut pairs: Vec<(ReasoningState, Action)> = path
            .iter()
            .map(|&(n, e)| (self.nodes[n].state.clone(), self.nodes[n].edges[e].action.clone()))
            .collect();
        if let Some(e) = final_edge {
            pairs.push((node.state.clone(), node.edges[e].action.clone()));
        }
        let p_end = end_proved_prior(node.edges.iter().map(|e| (&e.action, e.prior)));
        PlanResult {
            planner: PlannerKind::Mcp,
            best_state: node.state.clone(),
            best_score: node.score.clone(),
            end_proved_prior: p_end,
            option_score: (node.score.total + p_end) / 2.0,
            simulations_run: self.simulations_run(),
            actions_used: self.trace.iter().map(|r| r.applies).sum(),
            trace: self.trace.clone(),
            trajectory: Trajectory {
                pairs,
                final_score: node.score.total,
            },
        }
    }
}

pub fn mcp_plan(
    hypothesis: &str,
    question: &str,
    option: &str,
    env: &Environment,
    config: &PlanConfig,
) -> Result<PlanResult, PlanError> {
    let mut planner = McpPlanner::new(env, *config, new_episode(hypothesis, question, option))?;
    planner.run()?;
    Ok(planner.result())
}
