//! Hierarchical annotation schema: Codes, Sub-codes, the Code to Sub-code
//! constraint mapping and the per-Code message-direction rules.
//!
//! A [`Codebook`] is immutable once loaded. Identifiers compare byte-exact;
//! spelling tolerance (the `aliases` table) is only consulted by the
//! completion parser, never by [`Codebook::is_valid_pair`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel Sub-code used by Codes that define no Sub-codes.
pub const NONE_SUBCODE: &str = "None";

/// The only codebook file version this build understands.
pub const SCHEMA_VERSION: u32 = 1;

const DEFAULT_CODEBOOK: &str = include_str!("../data/pvminer_codebook.toml");

macro_rules! name_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(name: impl Into<String>) -> Self {
                Self(name.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

name_newtype!(
    /// High-level communicative category, e.g. `PartnershipPatient`.
    CodeId
);
name_newtype!(
    /// Fine-grained intent under a Code, e.g. `salutation`. May be shared by several Codes.
    SubcodeId
);

impl SubcodeId {
    pub fn none() -> Self {
        Self(NONE_SUBCODE.to_owned())
    }

    pub fn is_none_sentinel(&self) -> bool {
        self.0 == NONE_SUBCODE
    }
}

/// Message direction indicator (`TO_PAT_YN`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Provider writing to the patient.
    Y,
    /// Patient writing to the provider.
    N,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Y => "Y",
            Direction::N => "N",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Y" => Some(Direction::Y),
            "N" => Some(Direction::N),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which message directions a Code may be used with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DirectionRule {
    Y,
    N,
    #[serde(rename = "both")]
    Both,
}

impl DirectionRule {
    pub fn admits(self, d: Direction) -> bool {
        match self {
            DirectionRule::Both => true,
            DirectionRule::Y => d == Direction::Y,
            DirectionRule::N => d == Direction::N,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub name: CodeId,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubcodeEntry {
    pub name: SubcodeId,
    pub definition: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodebookError {
    #[error("malformed codebook document: {0}")]
    MalformedDocument(String),
    #[error("duplicate code `{0}`")]
    DuplicateCode(String),
    #[error("duplicate sub-code `{0}`")]
    DuplicateSubcode(String),
    #[error("mapping references undeclared sub-code `{0}`")]
    DanglingSubcodeReference(String),
    #[error("code `{0}` has an empty sub-code mapping")]
    EmptyMapping(String),
    #[error("cannot read codebook: {0}")]
    Io(String),
}

/// Wire form of the codebook file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookDoc {
    schema_version: u32,
    codes: Vec<CodeEntry>,
    subcodes: Vec<SubcodeEntry>,
    mapping: BTreeMap<String, Vec<String>>,
    direction_rules: BTreeMap<String, DirectionRule>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    aliases: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    codes: Vec<CodeEntry>,
    subcodes: Vec<SubcodeEntry>,
    /// Parallel to `codes`.
    mapping: Vec<Vec<SubcodeId>>,
    /// Parallel to `codes`.
    direction_rules: Vec<DirectionRule>,
    aliases: BTreeMap<String, SubcodeId>,
    code_index: HashMap<CodeId, usize>,
}

impl Codebook {
    /// The shipped patient-voice codebook (8 Codes, 26 Sub-codes).
    pub fn default_pvminer() -> Self {
        Self::from_toml_str(DEFAULT_CODEBOOK).expect("shipped codebook is valid")
    }

    /// Raw text of the shipped codebook file.
    pub fn default_source() -> &'static str {
        DEFAULT_CODEBOOK
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodebookError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CodebookError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(source: &str) -> Result<Self, CodebookError> {
        let doc: CodebookDoc =
            toml::from_str(source).map_err(|e| CodebookError::MalformedDocument(e.to_string()))?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: CodebookDoc) -> Result<Self, CodebookError> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(CodebookError::MalformedDocument(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        if doc.codes.is_empty() {
            return Err(CodebookError::MalformedDocument("no codes declared".into()));
        }

        let mut code_index = HashMap::new();
        for (i, c) in doc.codes.iter().enumerate() {
            if c.name.as_str().is_empty() {
                return Err(CodebookError::MalformedDocument("empty code name".into()));
            }
            if c.definition.trim().is_empty() {
                return Err(CodebookError::MalformedDocument(format!(
                    "code `{}` has an empty definition",
                    c.name
                )));
            }
            if code_index.insert(c.name.clone(), i).is_some() {
                return Err(CodebookError::DuplicateCode(c.name.to_string()));
            }
        }

        let mut declared = HashSet::new();
        for s in &doc.subcodes {
            if s.name.as_str().is_empty() {
                return Err(CodebookError::MalformedDocument("empty sub-code name".into()));
            }
            if s.name.is_none_sentinel() {
                return Err(CodebookError::MalformedDocument(format!(
                    "`{NONE_SUBCODE}` is reserved and must not be declared"
                )));
            }
            if s.definition.trim().is_empty() {
                return Err(CodebookError::MalformedDocument(format!(
                    "sub-code `{}` has an empty definition",
                    s.name
                )));
            }
            if !declared.insert(s.name.as_str()) {
                return Err(CodebookError::DuplicateSubcode(s.name.to_string()));
            }
        }

        for key in doc.mapping.keys().chain(doc.direction_rules.keys()) {
            if !code_index.contains_key(&CodeId::from(key.as_str())) {
                return Err(CodebookError::MalformedDocument(format!(
                    "rule for undeclared code `{key}`"
                )));
            }
        }

        let mut mapping = Vec::with_capacity(doc.codes.len());
        let mut direction_rules = Vec::with_capacity(doc.codes.len());
        for c in &doc.codes {
            let subs = doc
                .mapping
                .get(c.name.as_str())
                .filter(|v| !v.is_empty())
                .ok_or_else(|| CodebookError::EmptyMapping(c.name.to_string()))?;
            let has_none = subs.iter().any(|s| s == NONE_SUBCODE);
            if has_none && subs.len() > 1 {
                return Err(CodebookError::MalformedDocument(format!(
                    "code `{}` mixes `{NONE_SUBCODE}` with other sub-codes",
                    c.name
                )));
            }
            let mut seen = HashSet::new();
            for s in subs {
                if s != NONE_SUBCODE && !declared.contains(s.as_str()) {
                    return Err(CodebookError::DanglingSubcodeReference(s.clone()));
                }
                if !seen.insert(s.as_str()) {
                    return Err(CodebookError::DuplicateSubcode(s.clone()));
                }
            }
            mapping.push(subs.iter().map(|s| SubcodeId::from(s.as_str())).collect());

            let rule = doc.direction_rules.get(c.name.as_str()).ok_or_else(|| {
                CodebookError::MalformedDocument(format!("code `{}` has no direction rule", c.name))
            })?;
            direction_rules.push(*rule);
        }

        let mut aliases = BTreeMap::new();
        for (alias, target) in doc.aliases {
            if !declared.contains(target.as_str()) {
                return Err(CodebookError::DanglingSubcodeReference(target));
            }
            if declared.contains(alias.as_str()) {
                return Err(CodebookError::MalformedDocument(format!(
                    "alias `{alias}` shadows a declared sub-code"
                )));
            }
            aliases.insert(alias, SubcodeId::from(target));
        }

        Ok(Self {
            codes: doc.codes,
            subcodes: doc.subcodes,
            mapping,
            direction_rules,
            aliases,
            code_index,
        })
    }

    /// Serializes back into the codebook file format.
    pub fn to_toml_string(&self) -> String {
        let doc = CodebookDoc {
            schema_version: SCHEMA_VERSION,
            codes: self.codes.clone(),
            subcodes: self.subcodes.clone(),
            mapping: self
                .codes
                .iter()
                .zip(&self.mapping)
                .map(|(c, subs)| {
                    (c.name.to_string(), subs.iter().map(|s| s.to_string()).collect())
                })
                .collect(),
            direction_rules: self
                .codes
                .iter()
                .zip(&self.direction_rules)
                .map(|(c, r)| (c.name.to_string(), *r))
                .collect(),
            aliases: self
                .aliases
                .iter()
                .map(|(a, t)| (a.clone(), t.to_string()))
                .collect(),
        };
        toml::to_string(&doc).expect("codebook document serializes")
    }

    pub fn codes(&self) -> &[CodeEntry] {
        &self.codes
    }

    pub fn subcodes(&self) -> &[SubcodeEntry] {
        &self.subcodes
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.code_index.contains_key(&CodeId::from(code))
    }

    /// True for declared Sub-codes and for the `None` sentinel.
    pub fn has_subcode(&self, subcode: &str) -> bool {
        subcode == NONE_SUBCODE || self.subcodes.iter().any(|s| s.name.as_str() == subcode)
    }

    /// Valid Sub-codes for `code`, in declaration order.
    pub fn subcodes_for(&self, code: &str) -> Option<&[SubcodeId]> {
        self.code_index
            .get(&CodeId::from(code))
            .map(|&i| self.mapping[i].as_slice())
    }

    pub fn direction_rule(&self, code: &str) -> Option<DirectionRule> {
        self.code_index
            .get(&CodeId::from(code))
            .map(|&i| self.direction_rules[i])
    }

    pub fn definition_of_subcode(&self, subcode: &str) -> Option<&str> {
        self.subcodes
            .iter()
            .find(|s| s.name.as_str() == subcode)
            .map(|s| s.definition.as_str())
    }

    /// `true` iff `code` is declared and `subcode` is in its mapped set. Unknown names yield `false`.
    pub fn is_valid_pair(&self, code: &str, subcode: &str) -> bool {
        self.subcodes_for(code)
            .is_some_and(|subs| subs.iter().any(|s| s.as_str() == subcode))
    }

    /// `true` iff `code` is declared and its direction rule admits `d`.
    pub fn is_direction_consistent(&self, code: &str, d: Direction) -> bool {
        self.direction_rule(code).is_some_and(|r| r.admits(d))
    }

    /// Resolves a Sub-code spelling through the alias table.
    pub fn canonical_subcode<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map(|s| s.as_str()).unwrap_or(name)
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, &SubcodeId)> {
        self.aliases.iter().map(|(a, t)| (a.as_str(), t))
    }

    /// Every valid (Code, Sub-code) pair in declaration order.
    pub fn pairs(&self) -> Vec<(CodeId, SubcodeId)> {
        self.codes
            .iter()
            .zip(&self.mapping)
            .flat_map(|(c, subs)| subs.iter().map(move |s| (c.name.clone(), s.clone())))
            .collect()
    }
}
