//! Service identifiers of the form `agentdns://org/category.../name`.
//!
//! Grammar (ABNF, after ASCII case folding):
//!
//! ```text
//! identifier = "agentdns://" org 1*8("/" label) "/" name
//! org        = label
//! name       = label
//! label      = alnum [ *61( alnum / "-" ) alnum ]
//! alnum      = %x61-7A / DIGIT
//! ```
//!
//! The rendered identifier (without the scheme) is at most 253 bytes.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEME: &str = "agentdns://";
pub const MAX_LABEL_LEN: usize = 63;
pub const MAX_CATEGORY_DEPTH: usize = 8;
pub const MAX_NAME_LEN: usize = 253;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("identifier must start with `{SCHEME}`")]
    BadScheme,
    #[error("identifier needs org, at least one category and a name (got {0} segments)")]
    TooFewSegments(usize),
    #[error("illegal label `{0}`")]
    IllegalLabel(String),
    #[error("identifier too long ({0})")]
    TooLong(String),
}

impl NameError {
    pub fn kind(&self) -> &'static str {
        match self {
            NameError::BadScheme => "bad_scheme",
            NameError::TooFewSegments(_) => "too_few_segments",
            NameError::IllegalLabel(_) => "illegal_label",
            NameError::TooLong(_) => "too_long",
        }
    }
}

/// Checks a single (already lowercased) label against the DNS-style rules.
pub fn is_valid_label(label: &str) -> bool {
    let bytes = label.as_bytes();
    if bytes.is_empty() || bytes.len() > MAX_LABEL_LEN {
        return false;
    }
    let alnum = |b: u8| b.is_ascii_lowercase() || b.is_ascii_digit();
    alnum(bytes[0])
        && alnum(bytes[bytes.len() - 1])
        && bytes.iter().all(|&b| alnum(b) || b == b'-')
}

pub fn validate_label(label: &str) -> Result<(), NameError> {
    if is_valid_label(label) {
        Ok(())
    } else {
        Err(NameError::IllegalLabel(label.to_string()))
    }
}

/// Hierarchical category, e.g. `academic/nlp/summarization`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CategoryPath {
    segments: Vec<String>,
}

impl CategoryPath {
    pub fn new<I, S>(segments: I) -> Result<Self, NameError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let segments: Vec<String> = segments
            .into_iter()
            .map(|s| s.as_ref().to_ascii_lowercase())
            .collect();
        if segments.is_empty() {
            return Err(NameError::TooFewSegments(0));
        }
        if segments.len() > MAX_CATEGORY_DEPTH {
            return Err(NameError::TooLong(format!(
                "{} category levels, max {MAX_CATEGORY_DEPTH}",
                segments.len()
            )));
        }
        for s in &segments {
            validate_label(s)?;
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// True iff `self` is a (non-strict) prefix of `other`.
    pub fn is_prefix_of(&self, other: &CategoryPath) -> bool {
        self.segments.len() <= other.segments.len()
            && self.segments.iter().zip(&other.segments).all(|(a, b)| a == b)
    }
}

impl fmt::Display for CategoryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.segments.join("/"))
    }
}

impl FromStr for CategoryPath {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CategoryPath::new(s.split('/'))
    }
}

impl Serialize for CategoryPath {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CategoryPath {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Query-side prefix check used by discovery filters.
pub fn category_matches(query: &CategoryPath, candidate: &CategoryPath) -> bool {
    query.is_prefix_of(candidate)
}

/// A parsed, canonical (lowercase) service identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ServiceName {
    org: String,
    category: CategoryPath,
    name: String,
    canonical: String,
}

impl ServiceName {
    pub fn new(org: &str, category: CategoryPath, name: &str) -> Result<Self, NameError> {
        let org = org.to_ascii_lowercase();
        let name = name.to_ascii_lowercase();
        validate_label(&org)?;
        validate_label(&name)?;
        let canonical = format!("{SCHEME}{org}/{category}/{name}");
        let n = Self {
            org,
            category,
            name,
            canonical,
        };
        let body_len = n.canonical.len() - SCHEME.len();
        if body_len > MAX_NAME_LEN {
            return Err(NameError::TooLong(format!(
                "{body_len} bytes after scheme, max {MAX_NAME_LEN}"
            )));
        }
        Ok(n)
    }

    pub fn parse(text: &str) -> Result<Self, NameError> {
        let folded = text.to_ascii_lowercase();
        let body = folded.strip_prefix(SCHEME).ok_or(NameError::BadScheme)?;
        if body.len() > MAX_NAME_LEN {
            return Err(NameError::TooLong(format!(
                "{} bytes after scheme, max {MAX_NAME_LEN}",
                body.len()
            )));
        }
        let segments: Vec<&str> = body.split('/').collect();
        if segments.len() < 3 {
            return Err(NameError::TooFewSegments(segments.len()));
        }
        if segments.len() > MAX_CATEGORY_DEPTH + 2 {
            return Err(NameError::TooLong(format!(
                "{} category levels, max {MAX_CATEGORY_DEPTH}",
                segments.len() - 2
            )));
        }
        for s in &segments {
            validate_label(s)?;
        }
        let (org, rest) = segments.split_first().expect("len >= 3");
        let (name, category) = rest.split_last().expect("len >= 2");
        Ok(Self {
            org: (*org).to_string(),
            category: CategoryPath {
                segments: category.iter().map(|s| s.to_string()).collect(),
            },
            name: (*name).to_string(),
            canonical: folded,
        })
    }

    pub fn org(&self) -> &str {
        &self.org
    }

    pub fn category(&self) -> &CategoryPath {
        &self.category
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `org/cat.../name`, the identifier without its scheme.
    pub fn path(&self) -> &str {
        &self.canonical[SCHEME.len()..]
    }

    pub fn as_str(&self) -> &str {
        &self.canonical
    }

    pub fn render(&self) -> String {
        self.canonical.clone()
    }
}

pub fn parse(text: &str) -> Result<ServiceName, NameError> {
    ServiceName::parse(text)
}

pub fn render(name: &ServiceName) -> String {
    name.render()
}

impl fmt::Display for ServiceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

impl FromStr for ServiceName {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceName::parse(s)
    }
}

// Ordering is by canonical string; discovery tie-breaks rely on it.
impl Ord for ServiceName {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical.cmp(&other.canonical)
    }
}

impl PartialOrd for ServiceName {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for ServiceName {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ServiceName {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ServiceName::parse(&s).map_err(serde::de::Error::custom)
    }
}
