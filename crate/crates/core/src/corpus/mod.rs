//! Messages, gold annotations and the line-delimited corpus file.

mod split;
mod stats;
mod synth;

pub use split::{stratified_split, Fold, SplitAssignment, SplitError};
pub use stats::{corpus_stats, CorpusStats};
pub use synth::{synthesize_corpus, PairWeight, Profile, ProfileError};

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{Codebook, CodeId, Direction, SubcodeId};
use crate::meta::{self, Meta};

/// Format version written in corpus file headers.
pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: String,
    pub text: String,
    pub direction: Direction,
    pub source: Option<String>,
}

impl Message {
    pub fn new(id: impl Into<String>, text: impl Into<String>, direction: Direction) -> Self {
        Self { id: id.into(), text: text.into(), direction, source: None }
    }
}

/// Half-open character range into a message plus the covered text.
///
/// Offsets count Unicode scalar values, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Span {
    /// Builds the span `[start, end)` of `message`, or `None` if out of range or empty.
    pub fn from_offsets(message: &str, start: usize, end: usize) -> Option<Span> {
        if start >= end {
            return None;
        }
        char_slice(message, start, end).map(|t| Span { start, end, text: t.to_owned() })
    }

    /// Span of the first exact occurrence of `text` in `message`.
    pub fn find(message: &str, text: &str) -> Option<Span> {
        if text.is_empty() {
            return None;
        }
        let byte = message.find(text)?;
        let start = message[..byte].chars().count();
        let end = start + text.chars().count();
        Some(Span { start, end, text: text.to_owned() })
    }

    /// True when offsets are in range and `text` equals the covered substring.
    pub fn is_grounded_in(&self, message: &str) -> bool {
        self.start < self.end
            && char_slice(message, self.start, self.end).is_some_and(|t| t == self.text)
    }
}

/// Substring by character offsets.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s.char_indices().map(|(b, _)| b).chain(std::iter::once(s.len()));
    let b_start = indices.nth(start)?;
    let b_end = if end == start { b_start } else { indices.nth(end - start - 1)? };
    Some(&s[b_start..b_end])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Annotation {
    pub code: CodeId,
    pub subcode: SubcodeId,
    pub span: Span,
}

impl Annotation {
    pub fn new(code: impl Into<CodeId>, subcode: impl Into<SubcodeId>, span: Span) -> Self {
        Self { code: code.into(), subcode: subcode.into(), span }
    }

    /// Identity used for duplicate detection and set comparison: (Code, Sub-code, span text).
    pub fn key(&self) -> (&str, &str, &str) {
        (self.code.as_str(), self.subcode.as_str(), self.span.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldRecord {
    pub message: Message,
    pub annotations: Vec<Annotation>,
}

impl GoldRecord {
    pub fn id(&self) -> &str {
        &self.message.id
    }

    /// Distinct (Code, Sub-code) pairs, sorted. These are the stratification labels.
    pub fn label_pairs(&self) -> Vec<(CodeId, SubcodeId)> {
        let mut v: Vec<_> = self
            .annotations
            .iter()
            .map(|a| (a.code.clone(), a.subcode.clone()))
            .collect();
        v.sort();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("line {line}: cannot parse record: {detail}")]
    RecordParseError { line: usize, detail: String },
    #[error("line {line}: invalid pair ({code}, {subcode})")]
    InvalidPair { line: usize, code: String, subcode: String },
    #[error("line {line}: span not grounded in message: {detail}")]
    UngroundedSpan { line: usize, detail: String },
    #[error("line {line}: code {code} not admissible for direction {direction}")]
    DirectionMismatch { line: usize, code: String, direction: Direction },
    #[error("line {line}: duplicate annotation ({code}, {subcode}, {span:?})")]
    DuplicateTuple { line: usize, code: String, subcode: String, span: String },
    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },
}

impl CorpusError {
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::IoFailure(_) => None,
            CorpusError::RecordParseError { line, .. }
            | CorpusError::InvalidPair { line, .. }
            | CorpusError::UngroundedSpan { line, .. }
            | CorpusError::DirectionMismatch { line, .. }
            | CorpusError::DuplicateTuple { line, .. }
            | CorpusError::DuplicateId { line, .. } => Some(*line),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusIssue {
    pub error: CorpusError,
    pub fatal: bool,
}

/// Everything found while reading a corpus file.
#[derive(Debug, Clone, Default)]
pub struct CorpusReport {
    /// Records without fatal issues, in file order.
    pub records: Vec<GoldRecord>,
    pub issues: Vec<CorpusIssue>,
}

impl CorpusReport {
    pub fn fatal_count(&self) -> usize {
        self.issues.iter().filter(|i| i.fatal).count()
    }

    pub fn warning_count(&self) -> usize {
        self.issues.iter().filter(|i| !i.fatal).count()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationLine {
    code: String,
    subcode: String,
    span_text: String,
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    text: String,
    to_pat_yn: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default)]
    annotations: Vec<AnnotationLine>,
}

/// Parses and validates one record line. Fatal problems come back as `Err`;
/// direction mismatches are returned alongside the record unless `strict`.
pub fn parse_record_line(
    line_no: usize,
    line: &str,
    cb: &Codebook,
    strict: bool,
) -> Result<(GoldRecord, Vec<CorpusError>), CorpusError> {
    let raw: RecordLine = serde_json::from_str(line).map_err(|e| CorpusError::RecordParseError {
        line: line_no,
        detail: e.to_string(),
    })?;
    let direction = Direction::parse(&raw.to_pat_yn).ok_or_else(|| CorpusError::RecordParseError {
        line: line_no,
        detail: format!("to_pat_yn must be \"Y\" or \"N\", got {:?}", raw.to_pat_yn),
    })?;
    if raw.id.is_empty() {
        return Err(CorpusError::RecordParseError { line: line_no, detail: "empty id".into() });
    }
    if raw.text.is_empty() {
        return Err(CorpusError::RecordParseError { line: line_no, detail: "empty text".into() });
    }
    let message = Message { id: raw.id, text: raw.text, direction, source: raw.source };
    let annotations = raw
        .annotations
        .into_iter()
        .map(|a| Annotation {
            code: a.code.into(),
            subcode: a.subcode.into(),
            span: Span { start: a.start, end: a.end, text: a.span_text },
        })
        .collect();
    let record = GoldRecord { message, annotations };
    let mut warnings = Vec::new();
    for err in validate_record(&record, cb, line_no) {
        match err {
            CorpusError::DirectionMismatch { .. } if !strict => warnings.push(err),
            e => return Err(e),
        }
    }
    Ok((record, warnings))
}

/// All invariant violations of one record, in annotation order.
pub fn validate_record(record: &GoldRecord, cb: &Codebook, line: usize) -> Vec<CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for a in &record.annotations {
        if !cb.is_valid_pair(a.code.as_str(), a.subcode.as_str()) {
            out.push(CorpusError::InvalidPair {
                line,
                code: a.code.to_string(),
                subcode: a.subcode.to_string(),
            });
            continue;
        }
        if !a.span.is_grounded_in(&record.message.text) {
            out.push(CorpusError::UngroundedSpan {
                line,
                detail: format!("{:?} at [{}, {})", a.span.text, a.span.start, a.span.end),
            });
            continue;
        }
        if !cb.is_direction_consistent(a.code.as_str(), record.message.direction) {
            out.push(CorpusError::DirectionMismatch {
                line,
                code: a.code.to_string(),
                direction: record.message.direction,
            });
        }
        if !seen.insert(a.key()) {
            out.push(CorpusError::DuplicateTuple {
                line,
                code: a.code.to_string(),
                subcode: a.subcode.to_string(),
                span: a.span.text.clone(),
            });
        }
    }
    out
}

/// Reads a corpus, collecting every issue instead of stopping at the first.
pub fn read_corpus_report(
    reader: impl BufRead,
    cb: &Codebook,
    strict: bool,
) -> Result<CorpusReport, CorpusError> {
    let mut report = CorpusReport::default();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::IoFailure(e.to_string()))?;
        if line.trim().is_empty() || meta::is_meta_line(&line) {
            continue;
        }
        match parse_record_line(line_no, &line, cb, strict) {
            Ok((record, warnings)) => {
                report
                    .issues
                    .extend(warnings.into_iter().map(|error| CorpusIssue { error, fatal: false }));
                if !ids.insert(record.message.id.clone()) {
                    report.issues.push(CorpusIssue {
                        error: CorpusError::DuplicateId { line: line_no, id: record.message.id },
                        fatal: true,
                    });
                    continue;
                }
                report.records.push(record);
            }
            Err(error) => report.issues.push(CorpusIssue { error, fatal: true }),
        }
    }
    Ok(report)
}

/// Reads and validates a corpus file; the first fatal issue is returned as the error.
pub fn read_corpus(
    path: impl AsRef<Path>,
    cb: &Codebook,
    strict: bool,
) -> Result<Vec<GoldRecord>, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| CorpusError::IoFailure(format!("{}: {e}", path.display())))?;
    let report = read_corpus_report(BufReader::new(file), cb, strict)?;
    for issue in &report.issues {
        if issue.fatal {
            return Err(issue.error.clone());
        }
        log::warn!("{}", issue.error);
    }
    Ok(report.records)
}

/// Canonical single-line JSON form of a record.
pub fn record_to_line(record: &GoldRecord) -> String {
    let raw = RecordLine {
        id: record.message.id.clone(),
        text: record.message.text.clone(),
        to_pat_yn: record.message.direction.as_str().to_owned(),
        source: record.message.source.clone(),
        annotations: record
            .annotations
            .iter()
            .map(|a| AnnotationLine {
                code: a.code.to_string(),
                subcode: a.subcode.to_string(),
                span_text: a.span.text.clone(),
                start: a.span.start,
                end: a.span.end,
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("record serializes")
}

pub fn write_corpus(
    mut w: impl Write,
    records: &[GoldRecord],
    header: Option<&Meta>,
) -> std::io::Result<()> {
    if let Some(h) = header {
        writeln!(w, "{}", h.to_line())?;
    }
    for r in records {
        writeln!(w, "{}", record_to_line(r))?;
    }
    Ok(())
}

pub fn write_corpus_file(
    path: impl AsRef<Path>,
    records: &[GoldRecord],
    header: Option<&Meta>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path)
        .map_err(|e| CorpusError::IoFailure(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    write_corpus(&mut w, records, header)
        .and_then(|_| w.flush())
        .map_err(|e| CorpusError::IoFailure(e.to_string()))
}
