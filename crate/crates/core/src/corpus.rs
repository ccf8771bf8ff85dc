//! Passage corpus: JSON-lines of `{"id": str, "contents": str}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct PassageRecord {
    id: String,
    contents: String,
}

/// An in-memory passage collection with unique, non-empty ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    passages: BTreeMap<String, String>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, contents: impl Into<String>) -> Result<()> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Schema("empty passage id".into()));
        }
        if self.passages.contains_key(&id) {
            return Err(Error::Conflict(format!("duplicate passage id {id}")));
        }
        self.passages.insert(id, contents.into());
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.passages.get(id).map(String::as_str)
    }

    /// Passages in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.passages.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

/// Parses a JSONL corpus; blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PassageRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        corpus.insert(record.id, record.contents)?;
    }
    Ok(corpus)
}

/// Serializes a corpus as JSONL in ascending id order.
pub fn write_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for (id, contents) in corpus.iter() {
        let record = PassageRecord {
            id: id.to_string(),
            contents: contents.to_string(),
        };
        out.push_str(&serde_json::to_string(&record).expect("corpus record serializes"));
        out.push('\n');
    }
    out
}
