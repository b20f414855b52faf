//! Instruction prompts (baseline and engineered), few-shot exemplars and the
//! SFT conditioning query.
//!
//! Templates are plain text with `{{CODEBOOK}}` and `{{EXEMPLARS}}` in the
//! instruction body and `{{DIRECTION}}` / `{{MESSAGE}}` in the input block.
//! Substitution is single-pass, so placeholder-like text inside a message is
//! never expanded.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{Codebook, Direction};
use crate::corpus::{GoldRecord, Message};
use crate::parse::{validate_completion, Outcome, Policy};
use crate::sftprep::serialize_annotations;

const BASELINE: &str = include_str!("../templates/baseline.txt");
const ENGINEERED: &str = include_str!("../templates/engineered.txt");
const INPUT_BLOCK: &str = include_str!("../templates/input_block.txt");

const BODY_PLACEHOLDERS: &[&str] = &["CODEBOOK", "EXEMPLARS"];
const INPUT_PLACEHOLDERS: &[&str] = &["DIRECTION", "MESSAGE"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Baseline,
    Engineered,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::Baseline => "baseline",
            TemplateKind::Engineered => "engineered",
        })
    }
}

impl FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(TemplateKind::Baseline),
            "engineered" => Ok(TemplateKind::Engineered),
            other => Err(format!("unknown template kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unknown placeholder `{{{{{0}}}}}`")]
    UnknownPlaceholder(String),
    #[error("missing placeholder `{{{{{0}}}}}`")]
    MissingPlaceholder(String),
    #[error("exemplar `{id}` does not validate: {detail}")]
    InvalidExemplar { id: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    body: String,
    input: String,
}

impl PromptTemplate {
    pub fn builtin(kind: TemplateKind) -> Self {
        let body = match kind {
            TemplateKind::Baseline => BASELINE,
            TemplateKind::Engineered => ENGINEERED,
        };
        Self::new(kind, body, INPUT_BLOCK).expect("shipped templates are well-formed")
    }

    /// Custom template. The body must use both body placeholders and the
    /// input block both input placeholders; nothing else may appear.
    pub fn new(kind: TemplateKind, body: &str, input: &str) -> Result<Self, TemplateError> {
        check_placeholders(body, BODY_PLACEHOLDERS)?;
        check_placeholders(input, INPUT_PLACEHOLDERS)?;
        Ok(Self { kind, body: body.to_owned(), input: input.to_owned() })
    }
}

fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        let name = &after[..close];
        if !name.is_empty() && name.chars().all(|c| c.is_ascii_uppercase() || c == '_') {
            out.push(name);
        }
        rest = &after[close + 2..];
    }
    out
}

fn check_placeholders(text: &str, allowed: &[&str]) -> Result<(), TemplateError> {
    let found = placeholders(text);
    if let Some(bad) = found.iter().find(|p| !allowed.contains(p)) {
        return Err(TemplateError::UnknownPlaceholder((*bad).to_owned()));
    }
    if let Some(missing) = allowed.iter().find(|a| !found.contains(a)) {
        return Err(TemplateError::MissingPlaceholder((*missing).to_owned()));
    }
    Ok(())
}

/// Single-pass `{{NAME}}` substitution.
fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let hit = after.find("}}").and_then(|close| {
            let name = &after[..close];
            values.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 2..];
            }
            None => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// A demonstration shown before the final input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplar {
    pub message: Message,
    /// Serialized result document.
    pub gold: String,
}

impl Exemplar {
    pub fn from_record(record: &GoldRecord) -> Self {
        Self {
            message: record.message.clone(),
            gold: serialize_annotations(&record.annotations),
        }
    }

    /// The gold block must parse cleanly against `cb`.
    pub fn validate(&self, cb: &Codebook) -> Result<(), TemplateError> {
        let report = validate_completion(&self.gold, &self.message, cb, Policy::Strict);
        if report.outcome == Outcome::Valid {
            Ok(())
        } else {
            Err(TemplateError::InvalidExemplar {
                id: self.message.id.clone(),
                detail: report
                    .issues
                    .iter()
                    .map(|i| format!("{:?}: {}", i.kind, i.detail))
                    .collect::<Vec<_>>()
                    .join("; "),
            })
        }
    }
}

pub fn direction_line(d: Direction) -> &'static str {
    match d {
        Direction::N => "TO_PAT_YN: N (Patient speaking to provider)",
        Direction::Y => "TO_PAT_YN: Y (Provider speaking to patient)",
    }
}

/// Codebook definitions in declaration order, one block per Code separated
/// by blank lines:
///
/// ```text
/// CODE_NAME: <definition>
/// |- SUBCODE: <definition>
/// ```
pub fn render_codebook_block(cb: &Codebook) -> String {
    cb.codes()
        .iter()
        .map(|c| {
            let mut lines = vec![format!("{}: {}", c.name, c.definition)];
            for s in cb.subcodes_for(c.name.as_str()).unwrap_or_default() {
                if s.is_none_sentinel() {
                    lines.push("|- None: No sub-codes are defined for this Code.".to_owned());
                } else {
                    let def = cb.definition_of_subcode(s.as_str()).unwrap_or_default();
                    lines.push(format!("|- {s}: {def}"));
                }
            }
            lines.join("\n")
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_input(t: &PromptTemplate, m: &Message) -> String {
    substitute(&t.input, &[("DIRECTION", direction_line(m.direction)), ("MESSAGE", &m.text)])
}

fn render_exemplars(t: &PromptTemplate, shots: &[Exemplar]) -> String {
    if shots.is_empty() {
        return String::new();
    }
    let mut out = String::from("\n\nEXAMPLES:");
    for (i, ex) in shots.iter().enumerate() {
        out.push_str(&format!("\n\nExample {}:\n{}\n\nOUTPUT:\n{}", i + 1, render_input(t, &ex.message), ex.gold));
    }
    out
}

/// Instruction text without the final input block.
pub fn render_instruction(t: &PromptTemplate, cb: &Codebook, shots: &[Exemplar]) -> String {
    let codebook = render_codebook_block(cb);
    let exemplars = render_exemplars(t, shots);
    substitute(&t.body, &[("CODEBOOK", &codebook), ("EXEMPLARS", &exemplars)])
}

/// Full prompt: instruction, then a blank line, then the input block for `m`.
pub fn render_prompt(t: &PromptTemplate, cb: &Codebook, m: &Message, shots: &[Exemplar]) -> String {
    format!("{}\n\n{}", render_instruction(t, cb, shots), render_input(t, m))
}

/// Conditioning query: instruction, newline, message text, newline, direction.
pub fn build_sft_query(instruction: &str, m: &Message) -> String {
    format!("{instruction}\n{}\n{}", m.text, m.direction)
}

/// Greedy label-diversity selection: repeatedly takes the record adding the
/// most unseen (Code, Sub-code) pairs, scanning candidates in a seeded order.
pub fn select_exemplars(records: &[GoldRecord], k: usize, seed: u64) -> Vec<&GoldRecord> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut covered = BTreeSet::new();
    let mut picked: Vec<usize> = Vec::new();
    while picked.len() < k.min(records.len()) {
        let best = order
            .iter()
            .copied()
            .filter(|i| !picked.contains(i))
            .max_by_key(|&i| {
                let gain = records[i]
                    .label_pairs()
                    .into_iter()
                    .filter(|l| !covered.contains(l))
                    .count();
                // max_by_key keeps the last maximum; invert position to keep the first.
                (gain, std::cmp::Reverse(order.iter().position(|&o| o == i)))
            })
            .expect("candidates remain");
        covered.extend(records[best].label_pairs());
        picked.push(best);
    }
    picked.into_iter().map(|i| &records[i]).collect()
}
