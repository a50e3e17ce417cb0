//! Controlled red-flag vocabulary.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_VOCABULARY: &str = include_str!("../vocab/red_flags.v1.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabularyError {
    #[error("unknown red-flag tag: {0}")]
    UnknownTag(String),

    #[error("invalid vocabulary file: {0}")]
    Invalid(String),
}

/// A tag known to the vocabulary it was parsed against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RedFlag(String);

impl RedFlag {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RedFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagDefinition {
    pub tag: String,
    pub description: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyFile {
    version: u32,
    tags: Vec<TagDefinition>,
}

#[derive(Debug, Clone)]
pub struct RedFlagVocabulary {
    version: u32,
    definitions: Vec<TagDefinition>,
    tags: BTreeSet<String>,
}

impl RedFlagVocabulary {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_VOCABULARY).expect("bundled vocabulary is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, VocabularyError> {
        let file: VocabularyFile =
            serde_json::from_str(json).map_err(|e| VocabularyError::Invalid(e.to_string()))?;
        let mut tags = BTreeSet::new();
        for def in &file.tags {
            let ok = !def.tag.is_empty()
                && def
                    .tag
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
            if !ok {
                return Err(VocabularyError::Invalid(format!("bad tag name {:?}", def.tag)));
            }
            if !tags.insert(def.tag.clone()) {
                return Err(VocabularyError::Invalid(format!("duplicate tag {:?}", def.tag)));
            }
        }
        Ok(Self {
            version: file.version,
            definitions: file.tags,
            tags,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn definitions(&self) -> &[TagDefinition] {
        &self.definitions
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn parse(&self, tag: &str) -> Result<RedFlag, VocabularyError> {
        let tag = tag.trim();
        if self.contains(tag) {
            Ok(RedFlag(tag.to_string()))
        } else {
            Err(VocabularyError::UnknownTag(tag.to_string()))
        }
    }

    pub fn parse_all<I, S>(&self, tags: I) -> Result<BTreeSet<RedFlag>, VocabularyError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        tags.into_iter().map(|t| self.parse(t.as_ref())).collect()
    }

    pub fn tag_names(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }
}

impl Default for RedFlagVocabulary {
    fn default() -> Self {
        Self::bundled()
    }
}
