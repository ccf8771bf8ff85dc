//! TREC-style qrels and run files, plus the ranked-list type shared by every
//! stage of the pipeline.
//!
//! Run lines are `topic Q0 passage rank score tag`; qrels lines are
//! `topic 0 passage grade`. Scores are serialized with fixed 6-decimal
//! formatting so written runs are byte-reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One retrieval ranking list for a single topic.
///
/// Entries are always sorted by score descending with ties broken by
/// passage id ascending; passage ids are unique and scores finite. Every
/// list produced anywhere in the crate goes through [`ScoredList::new`],
/// which enforces that invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    topic_id: String,
    run_tag: String,
    entries: Vec<(String, f64)>,
}

impl ScoredList {
    /// Builds a list from unordered `(passage_id, score)` pairs.
    ///
    /// Sorts into canonical order and rejects duplicate ids, empty ids, and
    /// non-finite scores.
    pub fn new(
        topic_id: impl Into<String>,
        run_tag: impl Into<String>,
        mut entries: Vec<(String, f64)>,
    ) -> Result<Self> {
        let topic_id = topic_id.into();
        let mut seen = BTreeSet::new();
        for (id, score) in &mut entries {
            if id.is_empty() {
                return Err(Error::InvalidArg(format!(
                    "empty passage id in list for topic {topic_id}"
                )));
            }
            if !score.is_finite() {
                return Err(Error::InvalidArg(format!(
                    "non-finite score for passage {id} in topic {topic_id}"
                )));
            }
            // Canonicalize -0.0 so total_cmp treats it as a tie with 0.0.
            *score += 0.0;
            if !seen.insert(id.clone()) {
                return Err(Error::Conflict(format!(
                    "duplicate passage {id} in list for topic {topic_id}"
                )));
            }
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(ScoredList {
            topic_id,
            run_tag: run_tag.into(),
            entries,
        })
    }

    /// An empty list (a query that matched nothing).
    pub fn empty(topic_id: impl Into<String>, run_tag: impl Into<String>) -> Self {
        ScoredList {
            topic_id: topic_id.into(),
            run_tag: run_tag.into(),
            entries: Vec::new(),
        }
    }

    pub fn topic_id(&self) -> &str {
        &self.topic_id
    }

    pub fn run_tag(&self) -> &str {
        &self.run_tag
    }

    /// Entries in canonical rank order.
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_topic(mut self, topic_id: impl Into<String>) -> Self {
        self.topic_id = topic_id.into();
        self
    }

    pub fn with_tag(mut self, run_tag: impl Into<String>) -> Self {
        self.run_tag = run_tag.into();
        self
    }

    /// Keeps the top `depth` entries.
    pub fn truncated(mut self, depth: usize) -> Self {
        self.entries.truncate(depth);
        self
    }

    /// 1-based rank of a passage, if present.
    pub fn rank_of(&self, passage_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(id, _)| id == passage_id)
            .map(|i| i + 1)
    }

    /// Re-checks the canonical-order invariant. `new` establishes it; this
    /// exists so tests can assert it on lists that crossed a serialization
    /// boundary or arithmetic transform.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (id, score) in &self.entries {
            if !score.is_finite() {
                return Err(Error::InvalidArg(format!("non-finite score for {id}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Conflict(format!("duplicate passage {id}")));
            }
        }
        for pair in self.entries.windows(2) {
            let ordered = match pair[0].1.total_cmp(&pair[1].1) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Equal => pair[0].0 < pair[1].0,
                std::cmp::Ordering::Less => false,
            };
            if !ordered {
                return Err(Error::Schema(format!(
                    "list for topic {} not in canonical order near passage {}",
                    self.topic_id, pair[1].0
                )));
            }
        }
        Ok(())
    }
}

/// Graded relevance judgments keyed by (topic, passage).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    by_topic: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one judgment; duplicate (topic, passage) keys are rejected.
    pub fn insert(&mut self, topic: impl Into<String>, passage: impl Into<String>, grade: u32) -> Result<()> {
        let topic = topic.into();
        let passage = passage.into();
        let slot = self.by_topic.entry(topic.clone()).or_default();
        if slot.contains_key(&passage) {
            return Err(Error::Conflict(format!(
                "duplicate qrels key ({topic}, {passage})"
            )));
        }
        slot.insert(passage, grade);
        Ok(())
    }

    /// Grade for a (topic, passage) pair; unjudged pairs count as 0.
    pub fn grade(&self, topic: &str, passage: &str) -> u32 {
        self.by_topic
            .get(topic)
            .and_then(|m| m.get(passage))
            .copied()
            .unwrap_or(0)
    }

    /// All judgments for a topic, if any.
    pub fn judgments(&self, topic: &str) -> Option<&BTreeMap<String, u32>> {
        self.by_topic.get(topic)
    }

    /// Topics in ascending id order.
    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.by_topic.keys().map(String::as_str)
    }

    /// Number of passages judged relevant (grade >= threshold) for a topic.
    pub fn n_relevant(&self, topic: &str, threshold: u32) -> usize {
        self.by_topic
            .get(topic)
            .map(|m| m.values().filter(|&&g| g >= threshold).count())
            .unwrap_or(0)
    }

    pub fn n_topics(&self) -> usize {
        self.by_topic.len()
    }

    pub fn n_judgments(&self) -> usize {
        self.by_topic.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_topic.is_empty()
    }
}

/// Parses TREC 4-column qrels text: `topic 0 passage grade`.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 qrels columns, got {}", cols.len()),
            });
        }
        let grade: u32 = cols[3].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("grade must be a non-negative integer, got `{}`", cols[3]),
        })?;
        qrels.insert(cols[0], cols[2], grade)?;
    }
    Ok(qrels)
}

/// Parses TREC 6-column run text: `topic Q0 passage rank score tag`.
///
/// The rank column is ignored; per topic, entries are re-sorted into the
/// canonical (score desc, passage asc) order.
pub fn parse_run(text: &str) -> Result<BTreeMap<String, ScoredList>> {
    let mut raw: BTreeMap<String, (String, Vec<(String, f64)>)> = BTreeMap::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 6 run columns, got {}", cols.len()),
            });
        }
        let topic = cols[0].to_string();
        let passage = cols[2].to_string();
        let score: f64 = cols[4].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("score must be a real number, got `{}`", cols[4]),
        })?;
        if !score.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("score must be finite, got `{}`", cols[4]),
            });
        }
        if !seen.insert((topic.clone(), passage.clone())) {
            return Err(Error::Conflict(format!(
                "duplicate run entry ({topic}, {passage}) at line {line_no}"
            )));
        }
        let slot = raw
            .entry(topic)
            .or_insert_with(|| (cols[5].to_string(), Vec::new()));
        slot.1.push((passage, score));
    }
    let mut out = BTreeMap::new();
    for (topic, (tag, entries)) in raw {
        let list = ScoredList::new(topic.clone(), tag, entries)?;
        out.insert(topic, list);
    }
    Ok(out)
}

/// Serializes a run in TREC 6-column format.
///
/// Topics are emitted in ascending id order, the rank column is the 1-based
/// list position, and scores are printed with fixed 6-decimal formatting.
/// The given `tag` is written on every line.
pub fn write_run(run: &BTreeMap<String, ScoredList>, tag: &str) -> String {
    let mut out = String::new();
    for (topic, list) in run {
        for (rank, (passage, score)) in list.entries().iter().enumerate() {
            writeln!(out, "{topic} Q0 {passage} {} {score:.6} {tag}", rank + 1)
                .expect("write to string cannot fail");
        }
    }
    out
}

/// Rounds a score to exactly the value its 6-decimal TREC serialization
/// parses back to. Retrieval scores are quantized with this before any
/// fusion so that replaying a stage from its on-disk run file reproduces
/// the downstream output byte for byte.
pub fn quantize_score(score: f64) -> f64 {
    format!("{score:.6}").parse().expect("formatted float reparses")
}
