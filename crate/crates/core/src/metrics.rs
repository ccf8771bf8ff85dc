//! TREC-style retrieval metrics: MRR, NDCG@k, Recall@k, per topic and
//! macro-averaged.
//!
//! NDCG uses linear gain (`grade / log2(rank + 1)`) by default, with the
//! ideal ranking drawn from all judged passages of the topic. Unjudged
//! retrieved passages count as grade 0. Topics without any relevant passage
//! are excluded from the Recall macro average.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trec::{Qrels, ScoredList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MetricKind {
    Mrr,
    Ndcg,
    Recall,
}

/// A metric with an optional rank cutoff. NDCG and Recall require one;
/// MRR may run uncut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub cutoff: Option<usize>,
}

impl MetricSpec {
    /// Parses `mrr`, `mrr@10`, `ndcg@3`, `recall@100`.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, cutoff) = match text.split_once('@') {
            Some((name, k)) => {
                let k: usize = k.parse().map_err(|_| {
                    Error::InvalidArg(format!("bad metric cutoff in `{text}`"))
                })?;
                if k == 0 {
                    return Err(Error::InvalidArg(format!(
                        "metric cutoff must be >= 1 in `{text}`"
                    )));
                }
                (name, Some(k))
            }
            None => (text, None),
        };
        let kind = match name.to_ascii_lowercase().as_str() {
            "mrr" => MetricKind::Mrr,
            "ndcg" => MetricKind::Ndcg,
            "recall" => MetricKind::Recall,
            other => {
                return Err(Error::InvalidArg(format!("unknown metric `{other}`")));
            }
        };
        if kind != MetricKind::Mrr && cutoff.is_none() {
            return Err(Error::InvalidArg(format!(
                "metric `{text}` requires a cutoff, e.g. {text}@10"
            )));
        }
        Ok(MetricSpec { kind, cutoff })
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Mrr => "mrr",
            MetricKind::Ndcg => "ndcg",
            MetricKind::Recall => "recall",
        };
        match self.cutoff {
            Some(k) => write!(f, "{name}@{k}"),
            None => write!(f, "{name}"),
        }
    }
}

/// Gain function for NDCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    #[default]
    Linear,
    Exponential,
}

impl Gain {
    pub fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => (2f64).powi(grade as i32) - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Minimum grade counted as relevant for the binary metrics.
    pub rel_threshold: u32,
    pub gain: Gain,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            rel_threshold: 1,
            gain: Gain::Linear,
        }
    }
}

/// Reciprocal rank of the first passage with grade >= `rel_threshold`;
/// 0 when no relevant passage is retrieved.
pub fn mrr(list: &ScoredList, qrels: &Qrels, rel_threshold: u32) -> f64 {
    mrr_at(list, qrels, rel_threshold, None)
}

/// MRR with an optional rank cutoff.
pub fn mrr_at(list: &ScoredList, qrels: &Qrels, rel_threshold: u32, cutoff: Option<usize>) -> f64 {
    let limit = cutoff.unwrap_or(usize::MAX);
    for (rank0, (id, _)) in list.entries().iter().take(limit).enumerate() {
        if qrels.grade(list.topic_id(), id) >= rel_threshold {
            return 1.0 / (rank0 + 1) as f64;
        }
    }
    0.0
}

/// NDCG@k with linear gain.
pub fn ndcg_at_k(list: &ScoredList, qrels: &Qrels, k: usize) -> f64 {
    ndcg_at_k_gain(list, qrels, k, Gain::Linear)
}

pub fn ndcg_at_k_gain(list: &ScoredList, qrels: &Qrels, k: usize, gain: Gain) -> f64 {
    let topic = list.topic_id();
    let Some(judged) = qrels.judgments(topic) else {
        return 0.0;
    };
    let dcg: f64 = list
        .entries()
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (id, _))| gain.apply(qrels.grade(topic, id)) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Fraction of relevant passages found in the top k. Returns 0 when the
/// topic has no relevant passages; [`evaluate_run`] excludes such topics
/// from the macro average instead.
pub fn recall_at_k(list: &ScoredList, qrels: &Qrels, k: usize, rel_threshold: u32) -> f64 {
    let total = qrels.n_relevant(list.topic_id(), rel_threshold);
    if total == 0 {
        return 0.0;
    }
    let hits = list
        .entries()
        .iter()
        .take(k)
        .filter(|(id, _)| qrels.grade(list.topic_id(), id) >= rel_threshold)
        .count();
    hits as f64 / total as f64
}

/// Per-topic metric value; `None` marks a topic excluded from the macro
/// average (Recall on a topic with no relevant passages).
pub fn metric_value(
    spec: MetricSpec,
    list: &ScoredList,
    qrels: &Qrels,
    opts: &EvalOptions,
) -> Option<f64> {
    match spec.kind {
        MetricKind::Mrr => Some(mrr_at(list, qrels, opts.rel_threshold, spec.cutoff)),
        MetricKind::Ndcg => Some(ndcg_at_k_gain(
            list,
            qrels,
            spec.cutoff.expect("ndcg requires cutoff"),
            opts.gain,
        )),
        MetricKind::Recall => {
            if qrels.n_relevant(list.topic_id(), opts.rel_threshold) == 0 {
                None
            } else {
                Some(recall_at_k(
                    list,
                    qrels,
                    spec.cutoff.expect("recall requires cutoff"),
                    opts.rel_threshold,
                ))
            }
        }
    }
}

/// Evaluation report: one row per topic plus macro means.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub metrics: Vec<String>,
    /// topic -> per-metric value; `None` = excluded from that macro mean.
    pub per_topic: BTreeMap<String, Vec<Option<f64>>>,
    pub macro_means: Vec<f64>,
}

impl EvalReport {
    /// Macro mean for a metric by display name, e.g. `ndcg@3`.
    pub fn mean_of(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .position(|m| m == name)
            .map(|i| self.macro_means[i])
    }

    /// Deterministic CSV: one row per topic in ascending id order, then an
    /// `all` row with the macro means. Excluded cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("topic");
        for name in &self.metrics {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (topic, values) in &self.per_topic {
            out.push_str(topic);
            for value in values {
                out.push(',');
                if let Some(v) = value {
                    out.push_str(&format!("{v:.6}"));
                }
            }
            out.push('\n');
        }
        out.push_str("all");
        for mean in &self.macro_means {
            out.push(',');
            out.push_str(&format!("{mean:.6}"));
        }
        out.push('\n');
        out
    }
}

/// Evaluates a run against qrels for the given metrics.
///
/// The macro mean runs over the topics present in the qrels; a qrels topic
/// missing from the run scores 0 (empty list). Run topics without
/// judgments are ignored.
pub fn evaluate_run(
    run: &BTreeMap<String, ScoredList>,
    qrels: &Qrels,
    specs: &[MetricSpec],
    opts: &EvalOptions,
) -> EvalReport {
    let mut per_topic: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for topic in qrels.topics() {
        let empty;
        let list = match run.get(topic) {
            Some(list) => list,
            None => {
                empty = ScoredList::empty(topic, "missing");
                &empty
            }
        };
        let values: Vec<Option<f64>> = specs
            .iter()
            .map(|&spec| metric_value(spec, list, qrels, opts))
            .collect();
        per_topic.insert(topic.to_string(), values);
    }
    let macro_means: Vec<f64> = (0..specs.len())
        .map(|i| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for values in per_topic.values() {
                if let Some(v) = values[i] {
                    sum += v;
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect();
    EvalReport {
        metrics: specs.iter().map(|s| s.to_string()).collect(),
        per_topic,
        macro_means,
    }
}
