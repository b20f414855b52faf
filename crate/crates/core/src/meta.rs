//! Header line carried by every file the tool writes.
//!
//! Line-delimited outputs start with `{"_meta": {...}}`. Readers skip any line
//! whose top-level object has a `_meta` key, so headers never change the data.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "pvminer";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    /// What the file holds, e.g. `corpus`, `sft-manifest`, `split`.
    pub kind: String,
    /// Format version of `kind`.
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Hex SHA-256 of the canonical configuration string that produced the file.
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct MetaLine<'a> {
    #[serde(rename = "_meta", borrow)]
    meta: std::borrow::Cow<'a, Meta>,
}

impl Meta {
    pub fn new(kind: &str, format_version: u32, seed: Option<u64>, config: &str) -> Self {
        Self {
            tool: TOOL_NAME.to_owned(),
            version: TOOL_VERSION.to_owned(),
            kind: kind.to_owned(),
            format_version,
            seed,
            config_hash: sha256_hex(config.as_bytes()),
        }
    }

    /// Renders the header as one JSON line (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(&MetaLine { meta: std::borrow::Cow::Borrowed(self) })
            .expect("meta serializes")
    }

    /// Parses a header line, or `None` if `line` is not one.
    pub fn from_line(line: &str) -> Option<Meta> {
        let v: serde_json::Value = serde_json::from_str(line).ok()?;
        let inner = v.as_object()?.get("_meta")?.clone();
        serde_json::from_value(inner).ok()
    }
}

/// True if `line` is a JSON object carrying a `_meta` key.
pub fn is_meta_line(line: &str) -> bool {
    line.trim_start().starts_with("{\"_meta\"")
        || serde_json::from_str::<serde_json::Value>(line)
            .ok()
            .and_then(|v| v.as_object().map(|o| o.contains_key("_meta")))
            .unwrap_or(false)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
