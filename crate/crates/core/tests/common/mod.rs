#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};

use pvminer::codebook::{Codebook, Direction};
use pvminer::corpus::{read_corpus, GoldRecord, Message};
use pvminer::prompt::{render_prompt, Exemplar, PromptTemplate, TemplateKind};

pub const GOLDEN_MESSAGE_Y: &str = "Your lab results came back normal. We can keep the current dose for now.";
pub const GOLDEN_MESSAGE_N: &str = "I have been feeling dizzy since the dose change. Should I stop taking it?";

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(name: &str) -> PathBuf {
    manifest_dir().join("tests/fixtures").join(name)
}

pub fn exemplar_records() -> Vec<GoldRecord> {
    read_corpus(fixture("exemplars.jsonl"), &Codebook::default_pvminer(), true).unwrap()
}

pub fn golden_message(d: Direction) -> Message {
    match d {
        Direction::Y => Message::new("golden", GOLDEN_MESSAGE_Y, d),
        Direction::N => Message::new("golden", GOLDEN_MESSAGE_N, d),
    }
}

/// Every (template, shot count, direction) combination with its golden file name.
pub fn golden_cases() -> Vec<(TemplateKind, usize, Direction, String)> {
    let mut out = Vec::new();
    for kind in [TemplateKind::Baseline, TemplateKind::Engineered] {
        for shots in 0..=2 {
            for d in [Direction::Y, Direction::N] {
                out.push((kind, shots, d, format!("{kind}_{shots}shot_{d}.txt")));
            }
        }
    }
    out
}

/// Shots are the first `n` fixture exemplars, in file order.
pub fn render_golden(kind: TemplateKind, shots: usize, d: Direction) -> String {
    let cb = Codebook::default_pvminer();
    let ex: Vec<Exemplar> = exemplar_records().iter().take(shots).map(Exemplar::from_record).collect();
    render_prompt(&PromptTemplate::builtin(kind), &cb, &golden_message(d), &ex)
}

pub fn golden_path(name: &str) -> PathBuf {
    manifest_dir().join("tests/golden").join(name)
}

/// Compares against the committed golden. With `UPDATE_GOLDEN=1` the file is
/// rewritten instead.
pub fn check_golden(name: &str, rendered: &str) -> Result<(), String> {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, rendered).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == rendered.as_bytes() {
        Ok(())
    } else {
        let first_diff = expected.iter().zip(rendered.as_bytes()).position(|(a, b)| a != b);
        Err(format!(
            "{name} differs from the golden (golden {} bytes, rendered {} bytes, first difference at {:?})",
            expected.len(),
            rendered.len(),
            first_diff
        ))
    }
}

pub fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();
}

/// Seeded noisy predictions for `gold`: dropped tuples, relabeled Codes and
/// Sub-codes, trimmed or widened spans and spurious extra tuples.
pub fn noisy_predictions(gold: &[GoldRecord], cb: &Codebook, seed: u64) -> Vec<Vec<pvminer::corpus::Annotation>> {
    use pvminer::corpus::{Annotation, Span};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pairs = cb.pairs();
    gold.iter()
        .map(|g| {
            let text = &g.message.text;
            let n = text.chars().count();
            let mut pred = Vec::new();
            for a in &g.annotations {
                let roll: f64 = rng.gen();
                if roll < 0.15 {
                    continue;
                }
                let mut a = a.clone();
                if rng.gen_bool(0.15) {
                    let (c, s) = &pairs[rng.gen_range(0..pairs.len())];
                    a.code = c.clone();
                    if rng.gen_bool(0.5) {
                        a.subcode = s.clone();
                    }
                }
                if rng.gen_bool(0.3) {
                    let start = (a.span.start + rng.gen_range(0..4)).min(a.span.end.saturating_sub(1));
                    let end = (a.span.end + rng.gen_range(0..6)).min(n).max(start + 1);
                    a.span = Span::from_offsets(text, start, end).unwrap();
                }
                pred.push(a);
            }
            if rng.gen_bool(0.2) && n > 0 {
                let start = rng.gen_range(0..n);
                let end = rng.gen_range(start + 1..=n);
                let (c, s) = &pairs[rng.gen_range(0..pairs.len())];
                pred.push(Annotation::new(c.clone(), s.clone(), Span::from_offsets(text, start, end).unwrap()));
            }
            pred
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    Truncate,
    InjectProse,
    CorruptKey,
    CorruptSpan,
    CorruptLabel,
    ByteNoise,
    None,
}

pub const MUTATIONS: [Mutation; 7] = [
    Mutation::Truncate,
    Mutation::InjectProse,
    Mutation::CorruptKey,
    Mutation::CorruptSpan,
    Mutation::CorruptLabel,
    Mutation::ByteNoise,
    Mutation::None,
];

fn char_cut(s: &str, at: usize) -> &str {
    let at = at.min(s.chars().count());
    let byte = s.char_indices().nth(at).map_or(s.len(), |(b, _)| b);
    &s[..byte]
}

/// Applies one corruption to a well-formed completion.
pub fn mutate_completion(valid: &str, m: Mutation, rng: &mut impl rand::Rng) -> String {
    let n = valid.chars().count().max(1);
    match m {
        Mutation::Truncate => char_cut(valid, rng.gen_range(0..n)).to_owned(),
        Mutation::InjectProse => {
            let prose = ["Here is the analysis:\n", "Sure! ", "```json\n", "Result: "];
            let tail = ["\nHope this helps.", "\n```", " JSON_END trailing", " {\"note\": 1}"];
            format!("{}{valid}{}", prose[rng.gen_range(0..prose.len())], tail[rng.gen_range(0..tail.len())])
        }
        Mutation::CorruptKey => {
            let keys = ["\"Code\"", "\"Sub-code\"", "\"Span\"", "\"results\""];
            let bad = ["\"code\"", "\"Subcode\"", "\"span\"", "\"result\"", "\"Extra\""];
            valid.replacen(keys[rng.gen_range(0..keys.len())], bad[rng.gen_range(0..bad.len())], 1)
        }
        Mutation::CorruptSpan => {
            let mut v: serde_json::Value = match serde_json::from_str(valid) {
                Ok(v) => v,
                Err(_) => return valid.to_owned(),
            };
            if let Some(items) = v["results"].as_array_mut() {
                if !items.is_empty() {
                    let i = rng.gen_range(0..items.len());
                    let span = items[i]["Span"].as_str().unwrap_or_default().to_owned();
                    items[i]["Span"] = match rng.gen_range(0..4) {
                        0 => serde_json::Value::from(format!("{span} extra words")),
                        1 => serde_json::Value::from(span.replace(' ', "  ")),
                        2 => serde_json::Value::from(span.to_uppercase()),
                        _ => serde_json::Value::from(42),
                    };
                }
            }
            v.to_string()
        }
        Mutation::CorruptLabel => {
            let swaps = [("SDOH", "SDoH"), ("PartnershipPatient", "PartnershipProvider"), ("salutation", "signoff"), ("None", "none")];
            let (a, b) = swaps[rng.gen_range(0..swaps.len())];
            valid.replacen(a, b, 1)
        }
        Mutation::ByteNoise => {
            let mut chars: Vec<char> = valid.chars().collect();
            for _ in 0..rng.gen_range(1..4) {
                let i = rng.gen_range(0..chars.len().max(1));
                let c = ['{', '}', '"', '\\', ',', ':', '[', ']', '\u{0}', 'é', '😀'][rng.gen_range(0..11)];
                if i < chars.len() {
                    chars[i] = c;
                } else {
                    chars.push(c);
                }
            }
            chars.into_iter().collect()
        }
        Mutation::None => valid.to_owned(),
    }
}
