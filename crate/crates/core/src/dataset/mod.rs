//! JSONL corpora, question banks and gold trees.
//!
//! * corpus: `{"id", "text"}`
//! * questions: `{"id", "question", "options", "hypotheses", "correct_index"?, "difficulty"?}`
//! * trees: `{"id", "proof", "leaf_ids", "distractor_ids"?, "decoys"?, "misleading_id"?}`
//!   where `proof` reads `sent1 & sent2 -> int1: text; ...` and `sent<k>` is `leaf_ids[k-1]`.

pub mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{DecoyTree, Difficulty, GoldBank, GoldEntry};
use crate::linearize::{parse_proof, render_proof};
use crate::types::{EntailmentTree, Fact, PartialTree, RefKind};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: duplicate id `{id}`")]
    DuplicateId { path: PathBuf, id: String },
    #[error("trees without a matching question: {}", .0.join(", "))]
    Orphans(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub hypotheses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

impl QuestionRecord {
    /// `(option, hypothesis)` pairs.
    pub fn option_pairs(&self) -> Vec<(String, String)> {
        self.options
            .iter()
            .cloned()
            .zip(self.hypotheses.iter().cloned())
            .collect()
    }

    pub fn check(&self) -> Result<(), String> {
        if self.hypotheses.len() != self.options.len() {
            return Err(format!(
                "{} hypotheses for {} options",
                self.hypotheses.len(),
                self.options.len()
            ));
        }
        if let Some(c) = self.correct_index {
            if c >= self.options.len() {
                return Err(format!("correct index {c} out of range"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyRecord {
    pub option_index: usize,
    pub proof: String,
    pub leaf_ids: Vec<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub id: String,
    pub proof: String,
    pub leaf_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distractor_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decoys: Vec<DecoyRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misleading_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub excluded: Vec<Exclusion>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn reject_duplicates<'a>(path: &Path, ids: impl Iterator<Item = &'a str>) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(DatasetError::DuplicateId {
                path: path.to_path_buf(),
                id: id.to_string(),
            });
        }
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<Fact>, DatasetError> {
    let facts: Vec<Fact> = read_jsonl(path)?;
    reject_duplicates(path, facts.iter().map(|f| f.id.as_str()))?;
    Ok(facts)
}

pub fn load_questions(path: &Path) -> Result<Vec<QuestionRecord>, DatasetError> {
    let qs: Vec<QuestionRecord> = read_jsonl(path)?;
    reject_duplicates(path, qs.iter().map(|q| q.id.as_str()))?;
    Ok(qs)
}

pub fn load_trees(path: &Path) -> Result<Vec<TreeRecord>, DatasetError> {
    let ts: Vec<TreeRecord> = read_jsonl(path)?;
    reject_duplicates(path, ts.iter().map(|t| t.id.as_str()))?;
    Ok(ts)
}

/// Parses a dataset proof string and attaches leaf texts from the corpus.
pub fn tree_from_proof(
    proof: &str,
    leaf_ids: &[String],
    corpus: &HashMap<&str, &str>,
) -> Result<EntailmentTree, String> {
    let steps = parse_proof(proof).map_err(|e| e.to_string())?;
    let tree = PartialTree::new(steps).map_err(|e| e.to_string())?;
    let mut leaf_texts = BTreeMap::new();
    for leaf in tree.leaves() {
        debug_assert_eq!(leaf.kind, RefKind::Sent);
        let id = leaf_ids
            .get(leaf.index as usize - 1)
            .ok_or_else(|| format!("{leaf} has no leaf id"))?;
        let text = corpus
            .get(id.as_str())
            .ok_or_else(|| format!("fact `{id}` is not in the corpus"))?;
        leaf_texts.insert(leaf, text.to_string());
    }
    Ok(EntailmentTree { tree, leaf_texts })
}

/// Dataset proof string with conclusion texts.
pub fn tree_to_proof(tree: &EntailmentTree) -> String {
    render_proof(tree.tree.steps(), true)
}

/// Joins questions and trees by id. Trees without a question are an error; questions
/// without a tree, without a correct index, or with unresolvable facts are excluded.
pub fn build_bank(
    questions: &[QuestionRecord],
    trees: &[TreeRecord],
    corpus: &[Fact],
) -> Result<(GoldBank, LoadReport), DatasetError> {
    let question_ids: HashSet<&str> = questions.iter().map(|q| q.id.as_str()).collect();
    let orphans: Vec<String> = trees
        .iter()
        .filter(|t| !question_ids.contains(t.id.as_str()))
        .map(|t| t.id.clone())
        .collect();
    if !orphans.is_empty() {
        return Err(DatasetError::Orphans(orphans));
    }
    let by_id: HashMap<&str, &TreeRecord> = trees.iter().map(|t| (t.id.as_str(), t)).collect();
    let texts: HashMap<&str, &str> = corpus
        .iter()
        .map(|f| (f.id.as_str(), f.text.as_str()))
        .collect();
    let mut report = LoadReport::default();
    let mut entries = Vec::new();
    for q in questions {
        let result = (|| -> Result<GoldEntry, String> {
            q.check()?;
            let correct_index = q.correct_index.ok_or("no correct index")?;
            let t = by_id.get(q.id.as_str()).ok_or("no gold tree")?;
            let gold = tree_from_proof(&t.proof, &t.leaf_ids, &texts)?;
            if gold.tree.is_empty() {
                return Err("empty proof".into());
            }
            for id in t.distractor_ids.iter().chain(t.misleading_id.iter()) {
                if !texts.contains_key(id.as_str()) {
                    return Err(format!("fact `{id}` is not in the corpus"));
                }
            }
            let decoys = t
                .decoys
                .iter()
                .map(|d| {
                    if d.option_index >= q.options.len() || d.option_index == correct_index {
                        return Err(format!("decoy for option {}", d.option_index));
                    }
                    Ok(DecoyTree {
                        option_index: d.option_index,
                        tree: tree_from_proof(&d.proof, &d.leaf_ids, &texts)?,
                        leaf_ids: d.leaf_ids.clone(),
                        confidence: d.confidence,
                    })
                })
                .collect::<Result<Vec<_>, String>>()?;
            Ok(GoldEntry {
                id: q.id.clone(),
                question: q.question.clone(),
                options: q.options.clone(),
                hypotheses: q.hypotheses.clone(),
                correct_index,
                gold,
                leaf_ids: t.leaf_ids.clone(),
                distractor_ids: t.distractor_ids.clone(),
                difficulty: q.difficulty,
                decoys,
                misleading_id: t.misleading_id.clone(),
            })
        })();
        match result {
            Ok(e) => entries.push(e),
            Err(reason) => report.excluded.push(Exclusion {
                id: q.id.clone(),
                reason,
            }),
        }
    }
    report.loaded = entries.len();
    Ok((GoldBank::new(entries), report))
}

pub fn load_bank(
    questions_path: &Path,
    trees_path: &Path,
    corpus: &[Fact],
) -> Result<(GoldBank, LoadReport), DatasetError> {
    build_bank(&load_questions(questions_path)?, &load_trees(trees_path)?, corpus)
}
