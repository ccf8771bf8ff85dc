//! In-memory inverted index with Okapi BM25 scoring.
//!
//! Tokenization is lowercase + split on non-alphanumeric. Scoring uses the
//! positive-idf BM25 variant with k1=0.9, b=0.4 defaults:
//!
//! ```text
//! idf(t)     = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(D,Q) = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |D| / avgdl))
//! ```
//!
//! Only documents containing at least one query term are scored; a query
//! that tokenizes to nothing yields an empty list.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::trec::ScoredList;

/// Lowercases and splits on non-alphanumeric characters, dropping empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexOptions {
    pub k1: f64,
    pub b: f64,
    /// Tokens dropped at both index and query time. Empty by default.
    pub stopwords: BTreeSet<String>,
}

impl Default for IndexOptions {
    fn default() -> Self {
        IndexOptions {
            k1: 0.9,
            b: 0.4,
            stopwords: BTreeSet::new(),
        }
    }
}

/// Anything that turns query text into a ranked list. Lets fused pipelines
/// swap BM25 for other scorers behind the same contract.
pub trait Retriever: Sync {
    /// Top-`top_k` passages for the query. The returned list carries an
    /// empty topic id; callers attach the topic.
    fn search(&self, query: &str, top_k: usize) -> Result<ScoredList>;
}

const INDEX_MAGIC: &[u8; 8] = b"APCIRIDX";
const INDEX_VERSION: u32 = 1;

/// Immutable inverted index over a passage corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    options: IndexOptions,
    /// Ordinal -> passage id, in ascending passage-id order.
    doc_ids: Vec<String>,
    /// Ordinal -> token count (after stopword removal).
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    /// Term -> (doc ordinal ascending, term frequency).
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl InvertedIndex {
    /// Builds an index over the corpus; errors on an empty corpus.
    pub fn build(corpus: &Corpus, options: IndexOptions) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidArg("cannot index an empty corpus".into()));
        }
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (id, contents) in corpus.iter() {
            let ordinal = doc_ids.len() as u32;
            doc_ids.push(id.to_string());
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            let mut length = 0u32;
            for token in tokenize(contents) {
                if options.stopwords.contains(&token) {
                    continue;
                }
                *counts.entry(token).or_insert(0) += 1;
                length += 1;
            }
            doc_lengths.push(length);
            for (term, tf) in counts {
                postings.entry(term).or_default().push((ordinal, tf));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Ok(InvertedIndex {
            options,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn options(&self) -> &IndexOptions {
        &self.options
    }

    /// Passage ids posted for a term, in ordinal order. Mostly for tests.
    pub fn posted_docs(&self, term: &str) -> Vec<&str> {
        self.postings
            .get(term)
            .map(|p| {
                p.iter()
                    .map(|&(ord, _)| self.doc_ids[ord as usize].as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// BM25 top-k search. Deterministic: equal-score ties are broken by
    /// ascending passage id.
    pub fn search(&self, query: &str, top_k: usize) -> Result<ScoredList> {
        if top_k == 0 {
            return Err(Error::InvalidArg("top_k must be >= 1".into()));
        }
        // Unique query terms in first-occurrence order, with multiplicity.
        let mut term_order: Vec<(String, u32)> = Vec::new();
        for token in tokenize(query) {
            if self.options.stopwords.contains(&token) {
                continue;
            }
            match term_order.iter_mut().find(|(t, _)| *t == token) {
                Some((_, count)) => *count += 1,
                None => term_order.push((token, 1)),
            }
        }
        let n = self.doc_ids.len() as f64;
        let k1 = self.options.k1;
        let b = self.options.b;
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (term, query_tf) in &term_order {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for &(ordinal, tf) in postings {
                let len = self.doc_lengths[ordinal as usize] as f64;
                let tf = tf as f64;
                let norm = tf + k1 * (1.0 - b + b * len / self.avg_doc_length);
                let contribution = idf * tf * (k1 + 1.0) / norm * *query_tf as f64;
                *acc.entry(ordinal).or_insert(0.0) += contribution;
            }
        }
        let entries: Vec<(String, f64)> = acc
            .into_iter()
            .map(|(ordinal, score)| (self.doc_ids[ordinal as usize].clone(), score))
            .collect();
        Ok(ScoredList::new("", "bm25", entries)?.truncated(top_k))
    }

    /// Writes the index with a magic + version header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(INDEX_MAGIC);
        bytes.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        serde_json::to_writer(&mut bytes, self)
            .map_err(|e| Error::Schema(format!("index serialization failed: {e}")))?;
        crate::util::atomic_write(path, &bytes)
    }

    /// Loads and re-validates an index written by [`InvertedIndex::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 12 || &bytes[..8] != INDEX_MAGIC {
            return Err(Error::Schema(format!(
                "{} is not an index file (bad magic)",
                path.display()
            )));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != INDEX_VERSION {
            return Err(Error::Schema(format!(
                "unsupported index version {version}, expected {INDEX_VERSION}"
            )));
        }
        let index: InvertedIndex =
            serde_json::from_slice(&bytes[12..]).map_err(crate::session::json_error)?;
        index.validate()?;
        Ok(index)
    }

    fn validate(&self) -> Result<()> {
        if self.doc_ids.is_empty() || self.doc_ids.len() != self.doc_lengths.len() {
            return Err(Error::Schema("index doc tables inconsistent".into()));
        }
        let total: u64 = self.doc_lengths.iter().map(|&l| l as u64).sum();
        let mean = total as f64 / self.doc_lengths.len() as f64;
        if (mean - self.avg_doc_length).abs() > 1e-9 {
            return Err(Error::Schema("index avg_doc_length inconsistent".into()));
        }
        for postings in self.postings.values() {
            for &(ordinal, _) in postings {
                if ordinal as usize >= self.doc_ids.len() {
                    return Err(Error::Schema(format!(
                        "posting ordinal {ordinal} out of range"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Retriever for InvertedIndex {
    fn search(&self, query: &str, top_k: usize) -> Result<ScoredList> {
        InvertedIndex::search(self, query, top_k)
    }
}
