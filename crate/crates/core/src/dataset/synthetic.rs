//! Seeded generator of small consistent banks.
//!
//! Each entry is a chain: `e is a kind of c1`, `c1 is a kind of c2`, ..., `c_d can v o`
//! proves `e can v o` in `d` steps. Wrong options use other abilities. Words are
//! pseudo-random syllable strings, unique across the whole bank.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_bank, DecoyRecord, LoadReport, QuestionRecord, TreeRecord};
use crate::adapters::{Difficulty, GoldBank};
use crate::types::Fact;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub entries: usize,
    pub min_depth: usize,
    pub max_depth: usize,
    pub options: usize,
    pub distractors: usize,
    /// Attach a one-step derivation to every wrong option.
    pub decoys: bool,
    /// Share of entries carrying a misleading distractor.
    pub misleading_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            entries: 50,
            min_depth: 1,
            max_depth: 4,
            options: 4,
            distractors: 20,
            decoys: false,
            misleading_fraction: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBank {
    pub corpus: Vec<Fact>,
    pub questions: Vec<QuestionRecord>,
    pub trees: Vec<TreeRecord>,
    pub bank: GoldBank,
    pub report: LoadReport,
}

const ONSETS: [&str; 15] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| {
                    format!(
                        "{}{}",
                        ONSETS.choose(&mut self.rng).expect("non-empty"),
                        VOWELS.choose(&mut self.rng).expect("non-empty")
                    )
                })
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

struct Corpus {
    facts: Vec<Fact>,
}

impl Corpus {
    fn add(&mut self, entry: &str, text: String) -> String {
        let id = format!("{entry}-f{}", self.facts.len());
        self.facts.push(Fact::new(id.clone(), text));
        id
    }
}

/// Chain proof over leaves `sent1..sent{d+1}` with intermediate texts.
fn chain_proof(intermediates: &[String]) -> String {
    let mut parts = Vec::new();
    for (j, text) in intermediates.iter().enumerate() {
        let left = if j == 0 { "sent1".to_string() } else { format!("int{j}") };
        parts.push(format!("{left} & sent{} -> int{}: {text}", j + 2, j + 1));
    }
    parts.join("; ")
}

pub fn generate(config: &SyntheticConfig) -> SyntheticBank {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut words = Words {
        rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)),
        used: HashSet::new(),
    };
    let mut corpus = Corpus { facts: Vec::new() };
    let mut questions = Vec::with_capacity(config.entries);
    let mut trees = Vec::with_capacity(config.entries);
    let span = config.max_depth.max(config.min_depth) - config.min_depth + 1;
    let options = config.options.max(2);

    for i in 0..config.entries {
        let id = format!("q{i:04}");
        let depth = config.min_depth.max(1) + i % span;
        let e = words.fresh();
        let cats: Vec<String> = (0..depth).map(|_| words.fresh()).collect();
        let abilities: Vec<(String, String)> = (0..options).map(|_| (words.fresh(), words.fresh())).collect();
        let correct = rng.gen_range(0..options);
        let (verb, obj) = &abilities[correct];

        let mut leaf_texts = vec![format!("{e} is a kind of {}", cats[0])];
        for j in 1..depth {
            leaf_texts.push(format!("{} is a kind of {}", cats[j - 1], cats[j]));
        }
        leaf_texts.push(format!("{} can {verb} {obj}", cats[depth - 1]));
        let hypotheses: Vec<String> = abilities.iter().map(|(v, o)| format!("{e} can {v} {o}")).collect();
        let mut intermediates: Vec<String> = (1..depth).map(|j| format!("{e} is a kind of {}", cats[j])).collect();
        intermediates.push(hypotheses[correct].clone());

        let leaf_ids: Vec<String> = leaf_texts.into_iter().map(|t| corpus.add(&id, t)).collect();
        let mut distractor_ids: Vec<String> = (0..config.distractors)
            .map(|k| {
                let (a, b) = (words.fresh(), words.fresh());
                let text = if k % 2 == 0 {
                    format!("{a} is a kind of {b}")
                } else {
                    format!("{a} can {b} {}", words.fresh())
                };
                corpus.add(&id, text)
            })
            .collect();
        let misleading_id = (rng.gen::<f64>() < config.misleading_fraction).then(|| {
            let text = format!("{} is a kind of {}", words.fresh(), words.fresh());
            let m = corpus.add(&id, text);
            distractor_ids.push(m.clone());
            m
        });

        let mut decoys = Vec::new();
        if config.decoys {
            for (o, (v, ob)) in abilities.iter().enumerate() {
                if o == correct {
                    continue;
                }
                let d = words.fresh();
                let leaves = vec![
                    corpus.add(&id, format!("{e} is a kind of {d}")),
                    corpus.add(&id, format!("{d} can {v} {ob}")),
                ];
                decoys.push(DecoyRecord {
                    option_index: o,
                    proof: chain_proof(&hypotheses[o..=o]),
                    leaf_ids: leaves,
                    confidence: rng.gen_range(0.45..0.75),
                });
            }
        }

        questions.push(QuestionRecord {
            id: id.clone(),
            question: format!("What can a {e} do?"),
            options: abilities.iter().map(|(v, o)| format!("{v} {o}")).collect(),
            hypotheses,
            correct_index: Some(correct),
            difficulty: Some(if depth <= 2 { Difficulty::Easy } else { Difficulty::Chal }),
        });
        trees.push(TreeRecord {
            id,
            proof: chain_proof(&intermediates),
            leaf_ids,
            distractor_ids,
            decoys,
            misleading_id,
        });
    }

    let (bank, report) =
        build_bank(&questions, &trees, &corpus.facts).expect("generated trees all have questions");
    SyntheticBank {
        corpus: corpus.facts,
        questions,
        trees,
        bank,
        report,
    }
}
