//! Automatic tree metrics: node alignment, Leaves / Steps / Intermediates F1 and
//! AllCorrect, Overall AllCorrect, and run-level aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, Difficulty, Similarity};
use crate::types::{EntailmentTree, SentenceRef, SCORE_EPS};

/// Similarity above which an aligned intermediate counts as correct.
pub const INTERMEDIATE_THRESHOLD: f64 = 0.28;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TreeMetrics {
    pub leaves_f1: f64,
    pub leaves_allcorrect: f64,
    pub steps_f1: f64,
    pub steps_allcorrect: f64,
    pub inter_f1: f64,
    pub inter_allcorrect: f64,
    pub overall_allcorrect: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{metrics} tree results for {answers} answers")]
    LengthMismatch { metrics: usize, answers: usize },
}

fn node_text(tree: &EntailmentTree, r: SentenceRef) -> Option<&str> {
    tree.text_of(r)
}

fn leaf_text_set(tree: &EntailmentTree, node: SentenceRef) -> BTreeSet<&str> {
    tree.tree
        .descendant_leaves(node)
        .into_iter()
        .filter_map(|l| node_text(tree, l))
        .collect()
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Map from every predicted node to its gold counterpart, if any.
///
/// Leaves match by text. An intermediate goes to the first gold intermediate (in step
/// order) with the largest Jaccard similarity of descendant leaf texts; zero overlap
/// leaves it unaligned.
pub fn align(pred: &EntailmentTree, gold: &EntailmentTree) -> BTreeMap<SentenceRef, Option<SentenceRef>> {
    let mut out = BTreeMap::new();
    let gold_leaves = gold.tree.leaves();
    for leaf in pred.tree.leaves() {
        let text = node_text(pred, leaf);
        let m = gold_leaves
            .iter()
            .find(|g| text.is_some() && node_text(gold, **g) == text)
            .copied();
        out.insert(leaf, m);
    }
    let gold_sets: Vec<(SentenceRef, BTreeSet<&str>)> = gold
        .tree
        .steps()
        .iter()
        .map(|s| (s.conclusion, leaf_text_set(gold, s.conclusion)))
        .collect();
    for step in pred.tree.steps() {
        let set = leaf_text_set(pred, step.conclusion);
        let mut best: Option<(SentenceRef, f64)> = None;
        for (g, gs) in &gold_sets {
            let j = jaccard(&set, gs);
            if j > 0.0 && best.is_none_or(|(_, b)| j > b + SCORE_EPS) {
                best = Some((*g, j));
            }
        }
        out.insert(step.conclusion, best.map(|(g, _)| g));
    }
    out
}

fn f1(tp_pred: usize, n_pred: usize, tp_gold: usize, n_gold: usize) -> f64 {
    if n_pred == 0 && n_gold == 0 {
        return 1.0;
    }
    let p = if n_pred == 0 { 0.0 } else { tp_pred as f64 / n_pred as f64 };
    let r = if n_gold == 0 { 0.0 } else { tp_gold as f64 / n_gold as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn all_correct(f: f64) -> f64 {
    if f >= 1.0 - SCORE_EPS {
        1.0
    } else {
        0.0
    }
}

pub fn evaluate_tree(
    pred: &EntailmentTree,
    gold: &EntailmentTree,
    similarity: &dyn Similarity,
) -> Result<TreeMetrics, AdapterError> {
    evaluate_tree_with(pred, gold, similarity, INTERMEDIATE_THRESHOLD)
}

pub fn evaluate_tree_with(
    pred: &EntailmentTree,
    gold: &EntailmentTree,
    similarity: &dyn Similarity,
    threshold: f64,
) -> Result<TreeMetrics, AdapterError> {
    let alignment = align(pred, gold);

    let pred_leaves: BTreeSet<&str> = pred.tree.leaves().into_iter().filter_map(|l| node_text(pred, l)).collect();
    let gold_leaves: BTreeSet<&str> = gold.tree.leaves().into_iter().filter_map(|l| node_text(gold, l)).collect();
    let tp = pred_leaves.intersection(&gold_leaves).count();
    let leaves_f1 = f1(tp, pred_leaves.len(), tp, gold_leaves.len());

    let mut step_hits = 0;
    let mut gold_steps_hit = BTreeSet::new();
    let mut inter_hits = 0;
    let mut gold_inters_hit = BTreeSet::new();
    for step in pred.tree.steps() {
        let Some(g) = alignment.get(&step.conclusion).copied().flatten() else {
            continue;
        };
        let gold_step = gold.tree.step_for(g).expect("aligned to a gold conclusion");
        let mapped: Option<BTreeSet<SentenceRef>> = step
            .premises
            .iter()
            .map(|p| alignment.get(p).copied().flatten())
            .collect();
        let expected: BTreeSet<SentenceRef> = gold_step.premises.iter().copied().collect();
        if mapped.as_ref() == Some(&expected) {
            step_hits += 1;
            gold_steps_hit.insert(g);
        }
        let s = crate::adapters::clamp_unit(
            similarity.score(&step.conclusion_text, &gold_step.conclusion_text)?,
        );
        if s > threshold {
            inter_hits += 1;
            gold_inters_hit.insert(g);
        }
    }
    let (np, ng) = (pred.tree.len(), gold.tree.len());
    let steps_f1 = f1(step_hits, np, gold_steps_hit.len(), ng);
    let inter_f1 = f1(inter_hits, np, gold_inters_hit.len(), ng);
    let (la, sa, ia) = (all_correct(leaves_f1), all_correct(steps_f1), all_correct(inter_f1));
    Ok(TreeMetrics {
        leaves_f1,
        leaves_allcorrect: la,
        steps_f1,
        steps_allcorrect: sa,
        inter_f1,
        inter_allcorrect: ia,
        overall_allcorrect: la * sa * ia,
    })
}

/// Step sets keyed by text, for structural comparison independent of ref labels.
pub fn canonical_steps(tree: &EntailmentTree) -> BTreeSet<(BTreeSet<String>, String)> {
    tree.tree
        .steps()
        .iter()
        .map(|s| {
            let premises = s
                .premises
                .iter()
                .map(|p| tree.text_of(*p).unwrap_or_default().to_string())
                .collect();
            (premises, s.conclusion_text.clone())
        })
        .collect()
}

pub fn trees_equivalent(a: &EntailmentTree, b: &EntailmentTree) -> bool {
    canonical_steps(a) == canonical_steps(b)
}

/// Means of every metric and the answer accuracy, all scaled by 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub answer_accuracy: f64,
    pub leaves_f1: f64,
    pub leaves_allcorrect: f64,
    pub steps_f1: f64,
    pub steps_allcorrect: f64,
    pub inter_f1: f64,
    pub inter_allcorrect: f64,
    pub overall_allcorrect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    /// Absent when `n == 0`.
    pub means: Option<Means>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub all: Aggregate,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<String, Aggregate>,
}

fn aggregate(items: &[(&TreeMetrics, bool)]) -> Aggregate {
    let n = items.len();
    if n == 0 {
        return Aggregate { n, means: None };
    }
    let mean = |f: &dyn Fn(&TreeMetrics) -> f64| items.iter().map(|(m, _)| f(m)).sum::<f64>() * 100.0 / n as f64;
    Aggregate {
        n,
        means: Some(Means {
            answer_accuracy: items.iter().filter(|(_, ok)| *ok).count() as f64 * 100.0 / n as f64,
            leaves_f1: mean(&|m| m.leaves_f1),
            leaves_allcorrect: mean(&|m| m.leaves_allcorrect),
            steps_f1: mean(&|m| m.steps_f1),
            steps_allcorrect: mean(&|m| m.steps_allcorrect),
            inter_f1: mean(&|m| m.inter_f1),
            inter_allcorrect: mean(&|m| m.inter_allcorrect),
            overall_allcorrect: mean(&|m| m.overall_allcorrect),
        }),
    }
}

/// Aggregates per-question metrics with `(chosen, correct)` answers; splits by difficulty
/// when labels are given.
pub fn evaluate_run(
    metrics: &[TreeMetrics],
    answers: &[(usize, usize)],
    difficulty: Option<&[Option<Difficulty>]>,
) -> Result<RunReport, MetricsError> {
    if metrics.len() != answers.len() || difficulty.is_some_and(|d| d.len() != metrics.len()) {
        return Err(MetricsError::LengthMismatch {
            metrics: metrics.len(),
            answers: answers.len(),
        });
    }
    let items: Vec<(&TreeMetrics, bool)> = metrics
        .iter()
        .zip(answers)
        .map(|(m, (chosen, correct))| (m, chosen == correct))
        .collect();
    let mut splits = BTreeMap::new();
    if let Some(labels) = difficulty {
        for (name, want) in [("easy", Difficulty::Easy), ("chal", Difficulty::Chal)] {
            let subset: Vec<(&TreeMetrics, bool)> = items
                .iter()
                .zip(labels)
                .filter(|(_, l)| **l == Some(want))
                .map(|(it, _)| *it)
                .collect();
            splits.insert(name.to_string(), aggregate(&subset));
        }
    }
    Ok(RunReport {
        all: aggregate(&items),
        splits,
    })
}

impl RunReport {
    /// Fixed-width table, one row per split.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "split", "n", "acc", "leaf_f1", "leaf_ac", "step_f1", "step_ac", "int_f1", "int_ac", "overall"
        );
        let rows = std::iter::once(("all", &self.all)).chain(self.splits.iter().map(|(k, v)| (k.as_str(), v)));
        for (name, agg) in rows {
            match &agg.means {
                None => {
                    let _ = writeln!(out, "{:<6} {:>5} {:>8}", name, agg.n, "-");
                }
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{:<6} {:>5} {:>8.1} {:>8.1} {:>8.1} {:>8.1} {:>8.1} {:>8.1} {:>8.1} {:>8.1}",
                        name,
                        agg.n,
                        m.answer_accuracy,
                        m.leaves_f1,
                        m.leaves_allcorrect,
                        m.steps_f1,
                        m.steps_allcorrect,
                        m.inter_f1,
                        m.inter_allcorrect,
                        m.overall_allcorrect
                    );
                }
            }
        }
        out
    }
}
