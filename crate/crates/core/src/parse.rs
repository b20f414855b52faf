//! Recovery and validation of `{"results": [...]}` documents from raw model
//! completions.
//!
//! Validation never fails outright: every problem becomes an [`Issue`] in the
//! returned [`ParseReport`]. Items are the unit of failure, so under the
//! lenient policy one bad tuple is dropped while its siblings survive.
//!
//! Severity policy:
//!
//! | kind               | lenient    | strict     | effect                          |
//! |--------------------|------------|------------|---------------------------------|
//! | `NonParseable`     | fatal      | fatal      | no document                     |
//! | `Truncated`        | fatal      | fatal      | unbalanced braces               |
//! | `ExtraProse`       | repairable | repairable | surrounding text stripped       |
//! | `MalformedItem`    | repairable | repairable | item dropped                    |
//! | `ExtraField`       | warning    | warning    | key ignored                     |
//! | `UnknownCode`      | repairable | repairable | item dropped                    |
//! | `UnknownSubcode`   | repairable | repairable | item dropped                    |
//! | `InvalidPair`      | repairable | repairable | item dropped                    |
//! | `DirectionMismatch`| warning    | fatal      | item kept                       |
//! | `HallucinatedSpan` | repairable | fatal      | item dropped                    |
//! | `SpanNormalized`   | warning    | fatal      | item kept with recovered offsets|
//! | `DuplicateTuple`   | repairable | repairable | repeat dropped                  |

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::codebook::Codebook;
use crate::corpus::{char_slice, Annotation, Message, Span};

/// Stop string terminating generation.
pub const STOP_STRING: &str = "JSON_END";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueKind {
    NonParseable,
    ExtraProse,
    Truncated,
    MalformedItem,
    ExtraField,
    UnknownCode,
    UnknownSubcode,
    InvalidPair,
    DirectionMismatch,
    HallucinatedSpan,
    SpanNormalized,
    DuplicateTuple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Repairable,
    Fatal,
}

/// Coarse failure taxonomy for model outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureClass {
    FormatDrift,
    LabelConfusion,
    SpanNoise,
    DirectionError,
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl IssueKind {
    pub fn severity(self, policy: Policy) -> Severity {
        use IssueKind::*;
        match (self, policy) {
            (NonParseable | Truncated, _) => Severity::Fatal,
            (ExtraField, _) => Severity::Warning,
            (DirectionMismatch | SpanNormalized, Policy::Lenient) => Severity::Warning,
            (DirectionMismatch | SpanNormalized | HallucinatedSpan, Policy::Strict) => Severity::Fatal,
            _ => Severity::Repairable,
        }
    }

    pub fn failure_class(self) -> FailureClass {
        use IssueKind::*;
        match self {
            NonParseable | ExtraProse | Truncated | MalformedItem | ExtraField | DuplicateTuple => {
                FailureClass::FormatDrift
            }
            UnknownCode | UnknownSubcode | InvalidPair => FailureClass::LabelConfusion,
            HallucinatedSpan | SpanNormalized => FailureClass::SpanNoise,
            DirectionMismatch => FailureClass::DirectionError,
        }
    }

    fn repair(self, severity: Severity) -> Option<&'static str> {
        use IssueKind::*;
        match (self, severity) {
            (_, Severity::Fatal) => None,
            (ExtraProse, _) => Some("surrounding text stripped"),
            (ExtraField, _) => Some("field ignored"),
            (DirectionMismatch, _) => Some("kept under lenient policy"),
            (SpanNormalized, _) => Some("offsets recovered by whitespace-collapsed match"),
            (DuplicateTuple, _) => Some("repeat dropped"),
            _ => Some("item dropped"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub severity: Severity,
    pub detail: String,
    /// What was done about it; `None` only for fatal issues.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<String>,
    /// Index into the `results` array, when the issue concerns one item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<usize>,
}

impl Issue {
    fn new(kind: IssueKind, policy: Policy, item: Option<usize>, detail: impl Into<String>) -> Self {
        let severity = kind.severity(policy);
        Self {
            kind,
            severity,
            detail: detail.into(),
            repair: kind.repair(severity).map(str::to_owned),
            item,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Valid,
    Repaired,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseReport {
    pub outcome: Outcome,
    /// Accepted annotations in item order; empty when `Failed`.
    pub annotations: Vec<Annotation>,
    pub issues: Vec<Issue>,
}

impl ParseReport {
    fn from_issues(annotations: Vec<Annotation>, issues: Vec<Issue>) -> Self {
        let outcome = if issues.iter().any(|i| i.severity == Severity::Fatal) {
            Outcome::Failed
        } else if issues.is_empty() {
            Outcome::Valid
        } else {
            Outcome::Repaired
        };
        let annotations = if outcome == Outcome::Failed { Vec::new() } else { annotations };
        Self { outcome, annotations, issues }
    }

    /// Report standing in for a completion that never arrived.
    pub fn missing(detail: impl Into<String>) -> Self {
        Self::from_issues(
            Vec::new(),
            vec![Issue::new(IssueKind::NonParseable, Policy::Strict, None, detail)],
        )
    }
}

/// Location of the recovered document inside the completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted<'a> {
    pub document: &'a str,
    pub value: Map<String, Value>,
    pub issues: Vec<Issue>,
}

/// End byte index (inclusive) of the balanced `{...}` starting at `start`.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn is_only_decoration(s: &str) -> bool {
    s.replace("```json", "").replace("```JSON", "").replace("```", "").trim().is_empty()
}

/// Finds the first balanced top-level object containing a `results` key,
/// looking only at text before the stop string.
pub fn extract_result_document(completion: &str) -> Result<Extracted<'_>, Vec<Issue>> {
    let policy = Policy::Lenient;
    let region = completion.find(STOP_STRING).map_or(completion, |i| &completion[..i]);
    let mut pos = 0;
    let mut unbalanced = false;
    while let Some(off) = region[pos..].find('{') {
        let start = pos + off;
        let Some(end) = balanced_end(region, start) else {
            unbalanced = true;
            pos = start + 1;
            continue;
        };
        let candidate = &region[start..=end];
        match serde_json::from_str::<Value>(candidate) {
            Ok(Value::Object(map)) if map.contains_key("results") => {
                let mut issues = Vec::new();
                let outside = format!("{}{}", &region[..start], &region[end + 1..]);
                if !is_only_decoration(&outside) {
                    issues.push(Issue::new(
                        IssueKind::ExtraProse,
                        policy,
                        None,
                        format!("{} chars of text around the document", outside.trim().chars().count()),
                    ));
                }
                return Ok(Extracted { document: candidate, value: map, issues });
            }
            Ok(_) => pos = end + 1,
            Err(_) => pos = start + 1,
        }
    }
    let mut issues = vec![Issue::new(
        IssueKind::NonParseable,
        policy,
        None,
        "no balanced JSON object with a `results` key",
    )];
    if unbalanced {
        issues.push(Issue::new(IssueKind::Truncated, policy, None, "unbalanced braces"));
    }
    Err(issues)
}

/// Whitespace runs collapsed to one space. Each output char maps to the
/// half-open char range of the input it came from.
fn collapse_whitespace(s: &str) -> (Vec<char>, Vec<(usize, usize)>) {
    let mut chars = Vec::new();
    let mut map: Vec<(usize, usize)> = Vec::new();
    let mut in_ws = false;
    for (i, c) in s.chars().enumerate() {
        if c.is_whitespace() {
            if in_ws {
                map.last_mut().expect("run started").1 = i + 1;
            } else {
                chars.push(' ');
                map.push((i, i + 1));
                in_ws = true;
            }
        } else {
            chars.push(c);
            map.push((i, i + 1));
            in_ws = false;
        }
    }
    (chars, map)
}

/// Case-preserving match of `span` in `message` treating whitespace runs as equal.
pub fn whitespace_collapsed_match(message: &str, span: &str) -> Option<Span> {
    let (needle, _) = collapse_whitespace(span.trim());
    if needle.is_empty() {
        return None;
    }
    let (hay, map) = collapse_whitespace(message);
    let pos = hay.windows(needle.len()).position(|w| w == needle.as_slice())?;
    let start = map[pos].0;
    let end = map[pos + needle.len() - 1].1;
    Span::from_offsets(message, start, end)
}

fn string_field<'v>(item: &'v Map<String, Value>, key: &str) -> Option<&'v str> {
    item.get(key).and_then(Value::as_str)
}

/// Validates a raw completion for `message` against `cb`.
pub fn validate_completion(
    completion: &str,
    message: &Message,
    cb: &Codebook,
    policy: Policy,
) -> ParseReport {
    let extracted = match extract_result_document(completion) {
        Ok(e) => e,
        Err(issues) => return ParseReport::from_issues(Vec::new(), issues),
    };
    let mut issues = extracted.issues;
    for key in extracted.value.keys().filter(|k| *k != "results") {
        issues.push(Issue::new(IssueKind::ExtraField, policy, None, format!("top-level key `{key}`")));
    }
    let Some(items) = extracted.value.get("results").and_then(Value::as_array) else {
        issues.push(Issue::new(IssueKind::NonParseable, policy, None, "`results` is not an array"));
        return ParseReport::from_issues(Vec::new(), issues);
    };

    let mut accepted = Vec::new();
    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    for (idx, item) in items.iter().enumerate() {
        let at = Some(idx);
        let Some(obj) = item.as_object() else {
            issues.push(Issue::new(IssueKind::MalformedItem, policy, at, "item is not an object"));
            continue;
        };
        let (Some(code), Some(subcode), Some(span_text)) = (
            string_field(obj, "Code"),
            string_field(obj, "Sub-code"),
            string_field(obj, "Span"),
        ) else {
            issues.push(Issue::new(
                IssueKind::MalformedItem,
                policy,
                at,
                "missing or non-string `Code`, `Sub-code` or `Span`",
            ));
            continue;
        };
        for key in obj.keys().filter(|k| !matches!(k.as_str(), "Code" | "Sub-code" | "Span")) {
            issues.push(Issue::new(IssueKind::ExtraField, policy, at, format!("item key `{key}`")));
        }
        if !cb.has_code(code) {
            issues.push(Issue::new(IssueKind::UnknownCode, policy, at, format!("`{code}`")));
            continue;
        }
        let subcode = cb.canonical_subcode(subcode);
        if !cb.has_subcode(subcode) {
            issues.push(Issue::new(IssueKind::UnknownSubcode, policy, at, format!("`{subcode}`")));
            continue;
        }
        if !cb.is_valid_pair(code, subcode) {
            issues.push(Issue::new(IssueKind::InvalidPair, policy, at, format!("({code}, {subcode})")));
            continue;
        }
        if !cb.is_direction_consistent(code, message.direction) {
            issues.push(Issue::new(
                IssueKind::DirectionMismatch,
                policy,
                at,
                format!("{code} with TO_PAT_YN = {}", message.direction),
            ));
        }
        let span = match Span::find(&message.text, span_text) {
            Some(s) => s,
            None => match whitespace_collapsed_match(&message.text, span_text) {
                Some(s) => {
                    issues.push(Issue::new(
                        IssueKind::SpanNormalized,
                        policy,
                        at,
                        format!("{span_text:?} matched as {:?} at [{}, {})", s.text, s.start, s.end),
                    ));
                    s
                }
                None => {
                    issues.push(Issue::new(
                        IssueKind::HallucinatedSpan,
                        policy,
                        at,
                        format!("{span_text:?} not found in message"),
                    ));
                    continue;
                }
            },
        };
        if !seen.insert((code.to_owned(), subcode.to_owned(), span.text.clone())) {
            issues.push(Issue::new(
                IssueKind::DuplicateTuple,
                policy,
                at,
                format!("({code}, {subcode}, {:?})", span.text),
            ));
            continue;
        }
        accepted.push(Annotation::new(code, subcode, span));
    }
    ParseReport::from_issues(accepted, issues)
}

/// Maps a report to the failure taxonomy: the class of its most severe issue,
/// with ties resolved in the order format, label, span, direction. `None` for
/// issue-free reports.
pub fn classify_failure(report: &ParseReport) -> Option<FailureClass> {
    report
        .issues
        .iter()
        .map(|i| (std::cmp::Reverse(i.severity), i.kind.failure_class()))
        .min()
        .map(|(_, class)| class)
}

/// Per-item check that a `Valid`/`Repaired` report honours the annotation invariants.
pub fn annotations_are_sound(report: &ParseReport, message: &Message, cb: &Codebook) -> bool {
    report.annotations.iter().all(|a| {
        cb.is_valid_pair(a.code.as_str(), a.subcode.as_str())
            && a.span.is_grounded_in(&message.text)
            && char_slice(&message.text, a.span.start, a.span.end) == Some(a.span.text.as_str())
    })
}

#[derive(Serialize, Deserialize)]
struct AnnotationOut {
    code: String,
    subcode: String,
    span_text: String,
    start: usize,
    end: usize,
}

/// One line of the audit file written next to evaluation results.
#[derive(Serialize, Deserialize)]
pub struct ReportLine {
    pub id: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_class: Option<FailureClass>,
    annotations: Vec<AnnotationOut>,
    pub issues: Vec<Issue>,
}

impl ReportLine {
    pub fn new(id: &str, report: &ParseReport) -> Self {
        Self {
            id: id.to_owned(),
            outcome: report.outcome,
            failure_class: classify_failure(report),
            annotations: report
                .annotations
                .iter()
                .map(|a| AnnotationOut {
                    code: a.code.to_string(),
                    subcode: a.subcode.to_string(),
                    span_text: a.span.text.clone(),
                    start: a.span.start,
                    end: a.span.end,
                })
                .collect(),
            issues: report.issues.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report line serializes")
    }
}
