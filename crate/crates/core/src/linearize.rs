//! Canonical text forms of states and proofs.
//!
//! State text:
//! `$question$ <q> $option$ <o> $hypothesis$ <h> $proof$ <steps|none> $context$ <items|none>`
//! where steps are `sent1 & sent2 -> int1` joined by `; ` and context items are
//! `int1: <text>` joined by single spaces, in X order.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::types::{ReasoningState, RefParseError, SentenceRef, Step};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinearizeError {
    #[error("{0} cannot be resolved in the state")]
    Unresolvable(SentenceRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("proof parse error at offset {offset}: {message}")]
pub struct ProofParseError {
    pub offset: usize,
    pub message: String,
}

/// Renders steps as `sent1 & sent2 -> int1; ...`, optionally with `: <conclusion text>`.
pub fn render_proof(steps: &[Step], with_texts: bool) -> String {
    let mut out = String::new();
    for (i, step) in steps.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let premises: Vec<String> = step.premises.iter().map(ToString::to_string).collect();
        out.push_str(&premises.join(" & "));
        out.push_str(" -> ");
        out.push_str(&step.conclusion.to_string());
        if with_texts {
            out.push_str(": ");
            out.push_str(&step.conclusion_text);
        }
    }
    out
}

pub fn linearize_state(state: &ReasoningState) -> Result<String, LinearizeError> {
    for step in state.tree.steps() {
        for p in &step.premises {
            if state.resolve(*p).is_none() {
                return Err(LinearizeError::Unresolvable(*p));
            }
        }
    }
    let proof = if state.tree.is_empty() {
        "none".to_string()
    } else {
        render_proof(state.tree.steps(), false)
    };
    let context = if state.premises.is_empty() {
        "none".to_string()
    } else {
        state
            .premises
            .iter()
            .map(|(r, t)| format!("{r}: {t}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok(format!(
        "$question$ {} $option$ {} $hypothesis$ {} $proof$ {} $context$ {}",
        state.question, state.option, state.hypothesis, proof, context
    ))
}

/// Parses `a & b -> intN[: text]` steps separated by `;`.
///
/// Conclusion texts are optional; when absent the step's text is empty.
pub fn parse_proof(text: &str) -> Result<Vec<Step>, ProofParseError> {
    let mut steps = Vec::new();
    let mut offset = 0usize;
    for chunk in text.split(';') {
        let chunk_start = offset;
        offset += chunk.len() + 1;
        if chunk.trim().is_empty() {
            continue;
        }
        let arrow = chunk.find("->").ok_or_else(|| ProofParseError {
            offset: chunk_start + leading_ws(chunk),
            message: "missing `->`".into(),
        })?;
        let lhs = &chunk[..arrow];
        let rhs = &chunk[arrow + 2..];
        if rhs.contains("->") {
            return Err(ProofParseError {
                offset: chunk_start + arrow + 2 + rhs.find("->").unwrap_or(0),
                message: "more than one `->` in a step".into(),
            });
        }
        let mut premises = Vec::new();
        let mut pos = chunk_start;
        for part in lhs.split('&') {
            let r = parse_ref_at(part, pos)?;
            premises.push(r);
            pos += part.len() + 1;
        }
        let rhs_start = chunk_start + arrow + 2;
        let (conclusion_part, conclusion_text) = match rhs.split_once(':') {
            Some((r, t)) => (r, t.trim().to_string()),
            None => (rhs, String::new()),
        };
        let conclusion = parse_ref_at(conclusion_part, rhs_start)?;
        steps.push(Step::new(premises, conclusion, conclusion_text));
    }
    Ok(steps)
}

fn leading_ws(s: &str) -> usize {
    s.len() - s.trim_start().len()
}

fn parse_ref_at(part: &str, start: usize) -> Result<SentenceRef, ProofParseError> {
    let at = start + leading_ws(part);
    if part.trim().is_empty() {
        return Err(ProofParseError {
            offset: at,
            message: "empty sentence reference".into(),
        });
    }
    part.trim()
        .parse()
        .map_err(|RefParseError(r)| ProofParseError {
            offset: at,
            message: format!("invalid sentence reference `{r}`"),
        })
}

/// Canonical cache key. Premises are keyed in X order since the controller input depends on it.
pub fn state_key(state: &ReasoningState) -> String {
    let mut key = String::new();
    key.push_str(&state.hypothesis);
    key.push('\u{1f}');
    key.push_str(&state.question);
    key.push('\u{1f}');
    key.push_str(&state.option);
    key.push('\u{1e}');
    for (r, t) in &state.premises {
        key.push_str(&format!("{r}={t}\u{1f}"));
    }
    key.push('\u{1e}');
    for step in state.tree.steps() {
        for p in &step.premises {
            key.push_str(&format!("{p}={}&", state.resolve(*p).unwrap_or("?")));
        }
        key.push_str(&format!(
            "->{}={}\u{1f}",
            step.conclusion, step.conclusion_text
        ));
    }
    key.push('\u{1e}');
    for (q, n) in &state.retrieval_counts {
        key.push_str(&format!("{q}#{n}\u{1f}"));
    }
    key.push('\u{1e}');
    match state.ended {
        None => key.push('-'),
        Some(true) => key.push('P'),
        Some(false) => key.push('U'),
    }
    key
}

/// Structured view recovered from a linearized state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateView {
    pub question: String,
    pub option: String,
    pub hypothesis: String,
    pub steps: Vec<Step>,
    pub context: Vec<(SentenceRef, String)>,
}

impl StateView {
    pub fn context_text(&self, r: SentenceRef) -> Option<&str> {
        self.context
            .iter()
            .find(|(c, _)| *c == r)
            .map(|(_, t)| t.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateParseError {
    #[error("missing section marker `{0}`")]
    MissingSection(&'static str),
    #[error(transparent)]
    Proof(#[from] ProofParseError),
}

const MARKERS: [&str; 5] = [
    "$question$",
    "$option$",
    "$hypothesis$",
    "$proof$",
    "$context$",
];

/// Inverse of [`linearize_state`]. Sentence texts must not contain section markers
/// or embedded `sentN:`/`intN:` labels.
pub fn parse_state_text(text: &str) -> Result<StateView, StateParseError> {
    let mut positions = [0usize; 5];
    let mut from = 0;
    for (slot, marker) in MARKERS.iter().enumerate() {
        let at = text[from..]
            .find(marker)
            .ok_or(StateParseError::MissingSection(marker))?
            + from;
        positions[slot] = at;
        from = at + marker.len();
    }
    let section = |slot: usize| -> &str {
        let start = positions[slot] + MARKERS[slot].len();
        let end = if slot + 1 < MARKERS.len() {
            positions[slot + 1]
        } else {
            text.len()
        };
        text[start..end].trim()
    };
    let proof = section(3);
    let steps = if proof == "none" {
        Vec::new()
    } else {
        parse_proof(proof)?
    };
    let context = section(4);
    let context = if context == "none" {
        Vec::new()
    } else {
        split_context(context)
    };
    Ok(StateView {
        question: section(0).to_string(),
        option: section(1).to_string(),
        hypothesis: section(2).to_string(),
        steps,
        context,
    })
}

fn context_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\s)((?:sent|int)[1-9][0-9]*): ").expect("valid regex"))
}

fn split_context(context: &str) -> Vec<(SentenceRef, String)> {
    let labels: Vec<(usize, usize, SentenceRef)> = context_label()
        .captures_iter(context)
        .map(|c| {
            let whole = c.get(0).expect("match");
            let label = c.get(1).expect("group");
            let r = label.as_str().parse().expect("regex guarantees a valid ref");
            (whole.start(), whole.end(), r)
        })
        .collect();
    labels
        .iter()
        .enumerate()
        .map(|(i, &(_, body_start, r))| {
            let body_end = labels.get(i + 1).map_or(context.len(), |l| l.0);
            (r, context[body_start..body_end].trim().to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{PartialTree, SentenceRef as R};
    use std::collections::BTreeMap;

    fn state_with_one_step() -> ReasoningState {
        ReasoningState {
            hypothesis: "a decrease of prey populations will decrease predator populations."
                .into(),
            question: "Which will most likely cause a decrease in predator populations?".into(),
            option: "a decrease in prey populations.".into(),
            tree: PartialTree::new(vec![Step::new(
                vec![R::sent(1), R::sent(2)],
                R::int(1),
                "a decrease of food has a negative impact on organisms.",
            )])
            .unwrap(),
            premises: vec![
                (
                    R::int(1),
                    "a decrease of food has a negative impact on organisms.".into(),
                ),
                (
                    R::sent(3),
                    "if an organism eats something then that something is a source of food to that organism.".into(),
                ),
            ],
            sentences: vec!["prey is food for predators.".into(), "a decrease of food is bad.".into(), "if an organism eats something then that something is a source of food to that organism.".into()],
            retrieval_counts: BTreeMap::new(),
            actions_used: 2,
            ended: None,
        }
    }

    #[test]
    fn linearizes_like_the_controller_input_example() {
        let text = linearize_state(&state_with_one_step()).unwrap();
        assert_eq!(
            text,
            "$question$ Which will most likely cause a decrease in predator populations? \
             $option$ a decrease in prey populations. \
             $hypothesis$ a decrease of prey populations will decrease predator populations. \
             $proof$ sent1 & sent2 -> int1 \
             $context$ int1: a decrease of food has a negative impact on organisms. \
             sent3: if an organism eats something then that something is a source of food to that organism."
        );
    }

    #[test]
    fn empty_state_renders_none_sections() {
        let mut state = state_with_one_step();
        state.tree = PartialTree::empty();
        state.premises.clear();
        let text = linearize_state(&state).unwrap();
        assert!(text.ends_with("$proof$ none $context$ none"), "{text}");
    }

    #[test]
    fn unresolvable_reference_is_a_structural_error() {
        let mut state = state_with_one_step();
        state.sentences.truncate(1);
        assert_eq!(
            linearize_state(&state),
            Err(LinearizeError::Unresolvable(R::sent(2)))
        );
    }

    #[test]
    fn parses_table_format_and_chains() {
        let one = parse_proof("sent1 & sent2 -> int1").unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].premises, vec![R::sent(1), R::sent(2)]);
        assert_eq!(one[0].conclusion, R::int(1));
        assert!(parse_proof("").unwrap().is_empty());
        assert!(parse_proof("  ;  ").unwrap().is_empty());

        let chain = parse_proof("sent1 & int1 -> int2; sent3 & int2 -> int3").unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(chain[1].premises, vec![R::sent(3), R::int(2)]);
        assert_eq!(
            render_proof(&chain, false),
            "sent1 & int1 -> int2; sent3 & int2 -> int3"
        );
    }

    #[test]
    fn parses_dataset_format_with_texts() {
        let steps =
            parse_proof("sent1 & sent2 -> int1: ice is cold; int1 & sent3 -> int2: x & y;")
                .unwrap();
        assert_eq!(steps[0].conclusion_text, "ice is cold");
        assert_eq!(steps[1].conclusion_text, "x & y");
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let err = parse_proof("sent1 & sent2 int1").unwrap_err();
        assert_eq!(err.offset, 0);
        let err = parse_proof("sent1 & sent2 -> int1; sent1 & bogus -> int2").unwrap_err();
        assert_eq!(err.offset, 31);
        let err = parse_proof("sent1 & & sent2 -> int1").unwrap_err();
        assert_eq!(err.offset, 8);
        let err = parse_proof("sent1 -> int1 -> int2").unwrap_err();
        assert_eq!(err.offset, 14);
    }

    #[test]
    fn state_text_round_trips() {
        let state = state_with_one_step();
        let view = parse_state_text(&linearize_state(&state).unwrap()).unwrap();
        assert_eq!(view.question, state.question);
        assert_eq!(view.option, state.option);
        assert_eq!(view.hypothesis, state.hypothesis);
        assert_eq!(view.steps.len(), 1);
        assert_eq!(view.steps[0].premises, vec![R::sent(1), R::sent(2)]);
        assert_eq!(view.context, state.premises);
    }

    #[test]
    fn state_keys() {
        let a = state_with_one_step();
        assert_eq!(state_key(&a), state_key(&a.clone()));

        let mut b = a.clone();
        b.premises[1].1.push('!');
        assert_ne!(state_key(&a), state_key(&b));

        let mut permuted = a.clone();
        permuted.premises.reverse();
        assert_ne!(state_key(&a), state_key(&permuted));

        let mut scrolled = a.clone();
        scrolled.retrieval_counts.insert("q".into(), 1);
        assert_ne!(state_key(&a), state_key(&scrolled));
    }
}
