//! Per-level fusion-weight fitting: exhaustive grid search over the weight
//! simplex, maximizing a retrieval metric summed over each level's turns,
//! then applying the fitted table to test turns.
//!
//! The fitted weights are exact argmaxes: candidates are evaluated with an
//! index-based evaluator that reproduces `metric(linear_fuse(w, lists))`
//! bit for bit (same accumulation order, same tie-breaks), so the fitted
//! objective always equals an independent re-scan through the public
//! fusion and metric functions.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{linear_fuse, WeightVector, WEIGHT_SUM_EPSILON};
use crate::metrics::{metric_value, EvalOptions, MetricKind, MetricSpec};
use crate::reformulate::PersonalizationLevel;
use crate::trec::{Qrels, ScoredList};

/// All weight vectors with components on the grid {0, step, 2*step, ..., 1}
/// summing to 1, in lexicographic order.
///
/// `step` must divide 1 into an integer number of increments and `m` must be
/// at least 2.
pub fn enumerate_simplex(m: usize, step: f64) -> Result<Vec<WeightVector>> {
    if m < 2 {
        return Err(Error::InvalidArg(format!(
            "simplex needs at least 2 components, got {m}"
        )));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArg(format!("step {step} outside (0, 1]")));
    }
    let increments = (1.0 / step).round();
    if increments < 1.0 || (step * increments - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArg(format!(
            "step {step} does not divide 1 into integer increments"
        )));
    }
    let n = increments as u32;
    let mut out = Vec::new();
    let mut counts = vec![0u32; m];
    fill_compositions(n, n, 0, &mut counts, &mut out)?;
    Ok(out)
}

fn fill_compositions(
    total: u32,
    remaining: u32,
    index: usize,
    counts: &mut Vec<u32>,
    out: &mut Vec<WeightVector>,
) -> Result<()> {
    let m = counts.len();
    if index == m - 1 {
        counts[index] = remaining;
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        out.push(WeightVector::new(weights)?);
        return Ok(());
    }
    for c in 0..=remaining {
        counts[index] = c;
        fill_compositions(total, remaining - c, index + 1, counts, out)?;
    }
    Ok(())
}

/// One validation turn: its topic id plus the M normalized per-variant lists.
#[derive(Debug, Clone)]
pub struct FitTurn {
    pub topic_id: String,
    pub lists: Vec<ScoredList>,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Metric maximized during fitting.
    pub metric: MetricSpec,
    pub eval: EvalOptions,
    /// Grid step for the weight simplex.
    pub step: f64,
    /// Dataset tag recorded in the fitted table for provenance.
    pub fitted_on: String,
    /// Worker threads for the candidate scan; 0 = rayon default.
    pub threads: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            metric: MetricSpec {
                kind: MetricKind::Ndcg,
                cutoff: Some(3),
            },
            eval: EvalOptions::default(),
            step: 0.01,
            fitted_on: String::new(),
            threads: 0,
        }
    }
}

/// Fitted fusion weights per personalization level, with fit metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelWeightTable {
    pub metric: String,
    pub step: f64,
    pub levels: BTreeMap<PersonalizationLevel, WeightVector>,
    /// Levels that had no validation turns and inherited equal weights.
    #[serde(default)]
    pub unfitted: Vec<PersonalizationLevel>,
    /// Tag of the dataset the weights were fitted on.
    #[serde(default)]
    pub fitted_on: String,
}

impl LevelWeightTable {
    pub fn get(&self, level: PersonalizationLevel) -> Option<&WeightVector> {
        self.levels.get(&level)
    }

    /// Builds a table with the same vector for every level (e.g. replaying
    /// published weights or a fixed baseline).
    pub fn uniform(weights: WeightVector, note: &str) -> Self {
        let mut levels = BTreeMap::new();
        for level in PersonalizationLevel::ALL {
            levels.insert(level, weights.clone());
        }
        LevelWeightTable {
            metric: String::new(),
            step: 0.0,
            levels,
            unfitted: Vec::new(),
            fitted_on: note.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: LevelWeightTable =
            serde_json::from_str(text).map_err(crate::session::json_error)?;
        if table.levels.len() != PersonalizationLevel::ALL.len() {
            return Err(Error::Schema(
                "weight table must cover levels a, b, and c".into(),
            ));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::atomic_write(path, self.to_json().as_bytes())
    }
}

/// Fits one weight vector per personalization level by exhaustive grid
/// search: for each level the fitted vector maximizes the summed per-turn
/// metric of the linearly fused lists, with ties broken toward the
/// lexicographically smallest vector. Levels with no turns inherit the
/// equal-weight vector and are flagged unfitted.
pub fn fit_level_weights(
    groups: &BTreeMap<PersonalizationLevel, Vec<FitTurn>>,
    qrels: &Qrels,
    opts: &FitOptions,
) -> Result<LevelWeightTable> {
    let m = groups
        .values()
        .flat_map(|turns| turns.iter())
        .map(|turn| turn.lists.len())
        .next()
        .unwrap_or(3);
    for turns in groups.values() {
        for turn in turns {
            if turn.lists.len() != m {
                return Err(Error::InvalidArg(format!(
                    "turn {} has {} lists, expected {m}",
                    turn.topic_id,
                    turn.lists.len()
                )));
            }
        }
    }
    let candidates = enumerate_simplex(m, opts.step)?;

    let run = |table: &mut LevelWeightTable| -> Result<()> {
        for level in PersonalizationLevel::ALL {
            let turns = groups.get(&level).map(Vec::as_slice).unwrap_or(&[]);
            if turns.is_empty() {
                table.levels.insert(level, WeightVector::equal(m)?);
                table.unfitted.push(level);
                continue;
            }
            let evals: Vec<TurnEval> = turns
                .iter()
                .map(|turn| TurnEval::build(turn, qrels, opts))
                .collect::<Result<_>>()?;
            let best = candidates
                .par_iter()
                .enumerate()
                .map(|(index, w)| {
                    let objective: f64 = evals
                        .iter()
                        .map(|turn| turn.metric(w.weights(), opts))
                        .sum();
                    (objective, index)
                })
                .reduce(
                    || (f64::NEG_INFINITY, usize::MAX),
                    |a, b| {
                        // Higher objective wins; ties go to the earlier
                        // (lexicographically smaller) candidate.
                        if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                            b
                        } else {
                            a
                        }
                    },
                );
            table.levels.insert(level, candidates[best.1].clone());
        }
        Ok(())
    };

    let mut table = LevelWeightTable {
        metric: opts.metric.to_string(),
        step: opts.step,
        levels: BTreeMap::new(),
        unfitted: Vec::new(),
        fitted_on: opts.fitted_on.clone(),
    };
    if opts.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::InvalidArg(format!("thread pool: {e}")))?;
        pool.install(|| run(&mut table))?;
    } else {
        run(&mut table)?;
    }
    Ok(table)
}

/// Fuses each turn's lists with its level's fitted weights.
///
/// Errors when a topic has no lists or its level is missing from the table.
pub fn apply_weights(
    table: &LevelWeightTable,
    levels_by_topic: &BTreeMap<String, PersonalizationLevel>,
    lists_by_topic: &BTreeMap<String, Vec<ScoredList>>,
    output_depth: usize,
) -> Result<BTreeMap<String, ScoredList>> {
    let mut out = BTreeMap::new();
    for (topic, &level) in levels_by_topic {
        let lists = lists_by_topic.get(topic).ok_or_else(|| {
            Error::Missing(format!("no ranking lists for topic {topic}"))
        })?;
        let weights = table.get(level).ok_or_else(|| {
            Error::Missing(format!("level {level} missing from weight table"))
        })?;
        let fused = linear_fuse(weights, lists)?.truncated(output_depth);
        out.insert(topic.clone(), fused);
    }
    Ok(out)
}

// ── candidate evaluator ─────────────────────────────────────────────────

/// Per-turn matrix form of the normalized lists: docs in ascending-id order
/// (so index order equals the passage-id tie-break), flat score matrix, and
/// the grades / ideal-DCG constants the metric needs.
struct TurnEval {
    m: usize,
    /// scores[i * m + j]: normalized score of doc i in list j (0 if absent).
    scores: Vec<f64>,
    /// present[i] bit j set when doc i appears in list j.
    present: Vec<u32>,
    grades: Vec<u32>,
    idcg: f64,
    total_relevant: usize,
}

impl TurnEval {
    fn build(turn: &FitTurn, qrels: &Qrels, opts: &FitOptions) -> Result<Self> {
        let m = turn.lists.len();
        if m > 32 {
            return Err(Error::InvalidArg("more than 32 lists per turn".into()));
        }
        let mut ids: Vec<&str> = Vec::new();
        for list in &turn.lists {
            for (id, _) in list.entries() {
                ids.push(id.as_str());
            }
        }
        ids.sort_unstable();
        ids.dedup();
        let doc_index: BTreeMap<&str, usize> =
            ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let n = ids.len();
        let mut scores = vec![0.0; n * m];
        let mut present = vec![0u32; n];
        for (j, list) in turn.lists.iter().enumerate() {
            for (id, score) in list.entries() {
                let i = doc_index[id.as_str()];
                scores[i * m + j] = *score;
                present[i] |= 1 << j;
            }
        }
        let grades: Vec<u32> = ids
            .iter()
            .map(|id| qrels.grade(&turn.topic_id, id))
            .collect();
        // Ideal DCG over all judged passages, identical to the public NDCG.
        let k = opts.metric.cutoff.unwrap_or(usize::MAX);
        let mut judged: Vec<u32> = qrels
            .judgments(&turn.topic_id)
            .map(|j| j.values().copied().collect())
            .unwrap_or_default();
        judged.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = judged
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| opts.eval.gain.apply(g) / ((i + 2) as f64).log2())
            .sum();
        let total_relevant = qrels.n_relevant(&turn.topic_id, opts.eval.rel_threshold);
        Ok(TurnEval {
            m,
            scores,
            present,
            grades,
            idcg,
            total_relevant,
        })
    }

    fn n_docs(&self) -> usize {
        self.present.len()
    }

    /// Fused score of doc `i`: contributions accumulated in list order,
    /// skipping zero-weight lists, exactly like `linear_fuse`.
    #[inline]
    fn fused(&self, w: &[f64], i: usize, wmask: u32) -> f64 {
        let mut acc = 0.0;
        let row = &self.scores[i * self.m..(i + 1) * self.m];
        let bits = self.present[i] & wmask;
        for (j, &wj) in w.iter().enumerate() {
            if bits & (1 << j) != 0 {
                acc += wj * row[j];
            }
        }
        acc
    }

    fn metric(&self, w: &[f64], opts: &FitOptions) -> f64 {
        let mut wmask = 0u32;
        for (j, &wj) in w.iter().enumerate() {
            if wj > 0.0 {
                wmask |= 1 << j;
            }
        }
        match opts.metric.kind {
            MetricKind::Ndcg => {
                if self.idcg == 0.0 {
                    return 0.0;
                }
                let k = opts.metric.cutoff.expect("ndcg requires cutoff");
                let top = self.select_top_k(w, wmask, k);
                let dcg: f64 = top
                    .iter()
                    .enumerate()
                    .map(|(pos, &(_, i))| {
                        opts.eval.gain.apply(self.grades[i]) / ((pos + 2) as f64).log2()
                    })
                    .sum();
                dcg / self.idcg
            }
            MetricKind::Recall => {
                if self.total_relevant == 0 {
                    return 0.0;
                }
                let k = opts.metric.cutoff.expect("recall requires cutoff");
                let top = self.select_top_k(w, wmask, k);
                let hits = top
                    .iter()
                    .filter(|&&(_, i)| self.grades[i] >= opts.eval.rel_threshold)
                    .count();
                hits as f64 / self.total_relevant as f64
            }
            MetricKind::Mrr => {
                let mut best: Option<(f64, usize)> = None;
                for i in 0..self.n_docs() {
                    if self.present[i] & wmask == 0 || self.grades[i] < opts.eval.rel_threshold {
                        continue;
                    }
                    let score = self.fused(w, i, wmask);
                    // Scanning in ascending doc order, so strict > keeps the
                    // smallest index on ties.
                    if best.map_or(true, |(b, _)| score > b) {
                        best = Some((score, i));
                    }
                }
                let Some((best_score, best_index)) = best else {
                    return 0.0;
                };
                let mut rank = 1usize;
                for i in 0..self.n_docs() {
                    if self.present[i] & wmask == 0 {
                        continue;
                    }
                    let score = self.fused(w, i, wmask);
                    if score > best_score || (score == best_score && i < best_index) {
                        rank += 1;
                    }
                }
                if opts.metric.cutoff.is_some_and(|c| rank > c) {
                    0.0
                } else {
                    1.0 / rank as f64
                }
            }
        }
    }

    /// Top-k included docs as (score, index) in rank order: score descending,
    /// index (= passage id) ascending on ties.
    fn select_top_k(&self, w: &[f64], wmask: u32, k: usize) -> Vec<(f64, usize)> {
        let mut top: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for i in 0..self.n_docs() {
            if self.present[i] & wmask == 0 {
                continue;
            }
            let score = self.fused(w, i, wmask);
            if top.len() == k && !better((score, i), top[k - 1]) {
                continue;
            }
            let pos = top
                .iter()
                .position(|&existing| better((score, i), existing))
                .unwrap_or(top.len());
            top.insert(pos, (score, i));
            top.truncate(k);
        }
        top
    }
}

#[inline]
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// The summed per-turn metric of fused lists, computed exclusively through
/// the public fuse + metric path. Tests use it as the independent route to
/// check the fitted objective.
pub fn objective_via_public_path(
    weights: &WeightVector,
    turns: &[FitTurn],
    qrels: &Qrels,
    opts: &FitOptions,
) -> Result<f64> {
    let mut total = 0.0;
    for turn in turns {
        let fused = linear_fuse(weights, &turn.lists)?;
        total += metric_value(opts.metric, &fused, qrels, &opts.eval).unwrap_or(0.0);
    }
    Ok(total)
}

/// Weights summing to 1 within the shared epsilon — sanity helper for CLI
/// validation of externally supplied vectors.
pub fn weights_sum_to_one(weights: &[f64]) -> bool {
    (weights.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_EPSILON
}
