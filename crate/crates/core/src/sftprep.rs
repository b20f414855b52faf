//! Supervised fine-tuning pairs: conditioning query, serialized target and
//! the character offset where supervision starts.
//!
//! The loss mask is token-level and therefore tokenizer-specific; this module
//! only fixes the character boundary. Everything at or after `boundary` in
//! `query + completion` is the supervised region.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::corpus::{validate_record, Annotation, CorpusError, GoldRecord};
use crate::meta::Meta;
use crate::parse::STOP_STRING;
use crate::prompt::build_sft_query;

/// Format version written in manifest headers.
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub id: String,
    pub query: String,
    pub completion: String,
    /// Character (not byte) offset at which `completion` begins in `query + completion`.
    pub boundary: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairOptions {
    /// Append the stop string to every completion.
    pub stop_suffix: bool,
}

#[derive(Debug, Error)]
pub enum SftError {
    #[error("record `{id}` is invalid: {error}")]
    InvalidRecord { id: String, error: CorpusError },
    #[error("i/o failure: {0}")]
    IoFailure(String),
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Canonical result document: items ordered by span start, then Code,
/// Sub-code and span end; keys in `Code`, `Sub-code`, `Span` order; `", "`
/// and `": "` separators so the empty set reads `{"results": []}`.
pub fn serialize_annotations(annotations: &[Annotation]) -> String {
    let mut sorted: Vec<&Annotation> = annotations.iter().collect();
    sorted.sort_by(|a, b| {
        (a.span.start, a.code.as_str(), a.subcode.as_str(), a.span.end, a.span.text.as_str()).cmp(&(
            b.span.start,
            b.code.as_str(),
            b.subcode.as_str(),
            b.span.end,
            b.span.text.as_str(),
        ))
    });
    let items: Vec<String> = sorted
        .iter()
        .map(|a| {
            format!(
                "{{\"Code\": {}, \"Sub-code\": {}, \"Span\": {}}}",
                json_str(a.code.as_str()),
                json_str(a.subcode.as_str()),
                json_str(&a.span.text)
            )
        })
        .collect();
    format!("{{\"results\": [{}]}}", items.join(", "))
}

pub fn build_pair(record: &GoldRecord, instruction: &str, options: PairOptions) -> TrainPair {
    let query = build_sft_query(instruction, &record.message);
    let mut completion = serialize_annotations(&record.annotations);
    if options.stop_suffix {
        completion.push_str(STOP_STRING);
    }
    TrainPair {
        id: record.message.id.clone(),
        boundary: query.chars().count(),
        query,
        completion,
    }
}

/// Builds one pair per record. Records must satisfy the corpus invariants;
/// direction mismatches are tolerated here because `read_corpus` already
/// applied the caller's strictness.
pub fn build_pairs(
    records: &[GoldRecord],
    cb: &Codebook,
    instruction: &str,
    options: PairOptions,
) -> Result<Vec<TrainPair>, SftError> {
    records
        .iter()
        .map(|r| {
            if let Some(error) = validate_record(r, cb, 0)
                .into_iter()
                .find(|e| !matches!(e, CorpusError::DirectionMismatch { .. }))
            {
                return Err(SftError::InvalidRecord { id: r.message.id.clone(), error });
            }
            Ok(build_pair(r, instruction, options))
        })
        .collect()
}

/// Writes the manifest: optional header line, then one pair per line sorted by id.
pub fn write_manifest(
    mut w: impl Write,
    pairs: &[TrainPair],
    header: Option<&Meta>,
) -> std::io::Result<()> {
    let mut sorted: Vec<&TrainPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(h) = header {
        writeln!(w, "{}", h.to_line())?;
    }
    for p in sorted {
        writeln!(w, "{}", serde_json::to_string(p).expect("pair serializes"))?;
    }
    Ok(())
}

pub fn export_manifest(
    pairs: &[TrainPair],
    path: impl AsRef<Path>,
    header: Option<&Meta>,
) -> Result<(), SftError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_manifest(&mut buf, pairs, header).map_err(|e| SftError::IoFailure(e.to_string()))?;
    std::fs::write(path, buf).map_err(|e| SftError::IoFailure(format!("{}: {e}", path.display())))
}

/// Reads a manifest back, skipping the header line.
pub fn read_manifest(text: &str) -> Result<Vec<TrainPair>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !crate::meta::is_meta_line(l))
        .map(serde_json::from_str)
        .collect()
}
