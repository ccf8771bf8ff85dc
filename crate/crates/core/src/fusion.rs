//! Ranking-list fusion: min-max normalization, weighted linear combination,
//! reciprocal rank fusion, and round-robin interleaving.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trec::ScoredList;

/// Tolerance for the "weights sum to 1" invariant.
pub const WEIGHT_SUM_EPSILON: f64 = 1e-9;

/// Fusion weights over the query variants: each component in [0, 1],
/// summing to 1 within [`WEIGHT_SUM_EPSILON`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArg("weight vector cannot be empty".into()));
        }
        for &w in &weights {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidArg(format!(
                    "weight {w} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_EPSILON {
            return Err(Error::InvalidArg(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(WeightVector(weights))
    }

    /// The uniform vector (1/m, ..., 1/m).
    pub fn equal(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArg("weight vector cannot be empty".into()));
        }
        WeightVector::new(vec![1.0 / m as f64; m])
    }

    /// The corner vector with all mass on component `m`.
    pub fn corner(len: usize, m: usize) -> Result<Self> {
        if m >= len {
            return Err(Error::InvalidArg(format!(
                "corner index {m} out of range for {len} components"
            )));
        }
        let mut w = vec![0.0; len];
        w[m] = 1.0;
        WeightVector::new(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        WeightVector::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(v: WeightVector) -> Vec<f64> {
        v.0
    }
}

/// Min-max normalizes scores to [0, 1]: `(s - min) / (max - min)`.
///
/// Rank order is unchanged. When every score is equal (including a
/// single-entry list) the formula is undefined, so all scores map to the
/// neutral midpoint 0.5. Errors on an empty list.
pub fn minmax_normalize(list: &ScoredList) -> Result<ScoredList> {
    if list.is_empty() {
        return Err(Error::InvalidArg(format!(
            "cannot normalize empty list for topic {}",
            list.topic_id()
        )));
    }
    let max = list.entries().first().expect("non-empty").1;
    let min = list.entries().last().expect("non-empty").1;
    let entries: Vec<(String, f64)> = if max > min {
        let range = max - min;
        list.entries()
            .iter()
            .map(|(id, s)| (id.clone(), (s - min) / range))
            .collect()
    } else {
        list.entries()
            .iter()
            .map(|(id, _)| (id.clone(), 0.5))
            .collect()
    };
    ScoredList::new(list.topic_id(), list.run_tag(), entries)
}

/// Weighted linear combination of ranking lists.
///
/// Fused score of a passage is `sum_m w_m * s_m`, where a passage absent
/// from list `m` contributes 0 from that list. Zero-weight lists contribute
/// no candidates, so a corner weight vector reproduces its list exactly,
/// tie-breaks included. Inputs are expected to be min-max normalized and to
/// share a topic id.
pub fn linear_fuse(weights: &WeightVector, lists: &[ScoredList]) -> Result<ScoredList> {
    if weights.len() != lists.len() {
        return Err(Error::InvalidArg(format!(
            "{} weights for {} lists",
            weights.len(),
            lists.len()
        )));
    }
    let topic = lists.first().map(|l| l.topic_id().to_string()).unwrap_or_default();
    for list in lists {
        if list.topic_id() != topic {
            return Err(Error::InvalidArg(format!(
                "fusing lists for different topics: {} vs {}",
                topic,
                list.topic_id()
            )));
        }
    }
    let mut fused: BTreeMap<&str, f64> = BTreeMap::new();
    for (list, &w) in lists.iter().zip(weights.weights()) {
        if w == 0.0 {
            continue;
        }
        for (id, score) in list.entries() {
            *fused.entry(id.as_str()).or_insert(0.0) += w * score;
        }
    }
    let entries: Vec<(String, f64)> = fused
        .into_iter()
        .map(|(id, s)| (id.to_string(), s))
        .collect();
    ScoredList::new(topic, "fused-linear", entries)
}

/// Reciprocal rank fusion: `score(p) = sum_lists 1 / (k + rank)` with
/// 1-based ranks; passages absent from a list contribute nothing for it.
pub fn rrf_fuse(lists: &[ScoredList], k: f64) -> Result<ScoredList> {
    if k <= 0.0 {
        return Err(Error::InvalidArg(format!("rrf k must be > 0, got {k}")));
    }
    if lists.is_empty() {
        return Err(Error::InvalidArg("rrf needs at least one list".into()));
    }
    let topic = lists[0].topic_id().to_string();
    let mut fused: BTreeMap<&str, f64> = BTreeMap::new();
    for list in lists {
        for (rank0, (id, _)) in list.entries().iter().enumerate() {
            *fused.entry(id.as_str()).or_insert(0.0) += 1.0 / (k + (rank0 + 1) as f64);
        }
    }
    let entries: Vec<(String, f64)> = fused
        .into_iter()
        .map(|(id, s)| (id.to_string(), s))
        .collect();
    ScoredList::new(topic, "fused-rrf", entries)
}

/// Round-robin fusion: interleaves list heads in list order, skipping
/// passages already emitted. Output scores are synthetic `1/position`
/// values that preserve the interleave order.
pub fn round_robin_fuse(lists: &[ScoredList]) -> Result<ScoredList> {
    if lists.is_empty() {
        return Err(Error::InvalidArg("round robin needs at least one list".into()));
    }
    let topic = lists[0].topic_id().to_string();
    let mut emitted: Vec<&str> = Vec::new();
    let longest = lists.iter().map(ScoredList::len).max().unwrap_or(0);
    for depth in 0..longest {
        for list in lists {
            if let Some((id, _)) = list.entries().get(depth) {
                if !emitted.iter().any(|e| e == id) {
                    emitted.push(id);
                }
            }
        }
    }
    let entries: Vec<(String, f64)> = emitted
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), 1.0 / (i + 1) as f64))
        .collect();
    ScoredList::new(topic, "fused-rr", entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(topic: &str, entries: &[(&str, f64)]) -> ScoredList {
        ScoredList::new(
            topic,
            "t",
            entries.iter().map(|(id, s)| (id.to_string(), *s)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn weight_vector_invariants() {
        assert!(WeightVector::new(vec![0.2, 0.3, 0.5]).is_ok());
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        assert_eq!(WeightVector::equal(4).unwrap().weights(), &[0.25; 4]);
    }

    #[test]
    fn minmax_affine_map() {
        let normalized =
            minmax_normalize(&list("t", &[("a", 2.0), ("b", 5.0), ("c", 8.0)])).unwrap();
        let entries = normalized.entries();
        assert_eq!(entries[0], ("c".to_string(), 1.0));
        assert_eq!(entries[1], ("b".to_string(), 0.5));
        assert_eq!(entries[2], ("a".to_string(), 0.0));
    }

    #[test]
    fn minmax_degenerate_maps_to_half() {
        let normalized = minmax_normalize(&list("t", &[("a", 3.0), ("b", 3.0)])).unwrap();
        for (_, s) in normalized.entries() {
            assert_eq!(*s, 0.5);
        }
        let single = minmax_normalize(&list("t", &[("only", 42.0)])).unwrap();
        assert_eq!(single.entries()[0].1, 0.5);
    }

    #[test]
    fn minmax_empty_errors() {
        assert!(minmax_normalize(&ScoredList::empty("t", "x")).is_err());
    }

    #[test]
    fn linear_corner_weight_reproduces_list() {
        let l1 = list("t", &[("a", 1.0), ("b", 0.5), ("c", 0.0)]);
        let l2 = list("t", &[("z", 1.0), ("y", 0.0)]);
        let l3 = list("t", &[("q", 1.0)]);
        let corner = WeightVector::corner(3, 0).unwrap();
        let fused = linear_fuse(&corner, &[l1.clone(), l2, l3]).unwrap();
        assert_eq!(fused.entries(), l1.entries());
    }

    #[test]
    fn linear_convexity_point() {
        let l1 = list("t", &[("x", 1.0), ("pad1", 0.0)]);
        let l2 = list("t", &[("x", 1.0), ("pad2", 0.0)]);
        let l3 = list("t", &[("x", 1.0), ("pad3", 0.0)]);
        let w = WeightVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let fused = linear_fuse(&w, &[l1, l2, l3]).unwrap();
        assert_eq!(fused.entries()[0].0, "x");
        assert!((fused.entries()[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_weight_count_mismatch_errors() {
        let l = list("t", &[("a", 1.0)]);
        let w = WeightVector::equal(2).unwrap();
        assert!(linear_fuse(&w, &[l]).is_err());
    }

    #[test]
    fn rrf_hand_values() {
        let l1 = list("t", &[("top", 1.0), ("b", 0.5), ("c", 0.25)]);
        let l2 = list("t", &[("top", 1.0), ("c", 0.5)]);
        let fused = rrf_fuse(&[l1, l2], 60.0).unwrap();
        let top = fused.entries().iter().find(|(id, _)| id == "top").unwrap();
        assert!((top.1 - 2.0 / 61.0).abs() < 1e-12);
        let b = fused.entries().iter().find(|(id, _)| id == "b").unwrap();
        assert!((b.1 - 1.0 / 62.0).abs() < 1e-12);
        // c: rank 3 in list 1 and rank 2 in list 2.
        let c = fused.entries().iter().find(|(id, _)| id == "c").unwrap();
        assert!((c.1 - (1.0 / 63.0 + 1.0 / 62.0)).abs() < 1e-12);
    }

    #[test]
    fn rrf_rejects_nonpositive_k() {
        let l = list("t", &[("a", 1.0)]);
        assert!(rrf_fuse(&[l.clone()], 0.0).is_err());
        assert!(rrf_fuse(&[l], -1.0).is_err());
    }

    #[test]
    fn round_robin_interleaves_with_dedup() {
        let l1 = list("t", &[("A", 1.0), ("B", 0.5)]);
        let l2 = list("t", &[("C", 1.0), ("A", 0.5)]);
        let fused = round_robin_fuse(&[l1, l2]).unwrap();
        let ids: Vec<&str> = fused.entries().iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["A", "C", "B"]);
        let scores: Vec<f64> = fused.entries().iter().map(|(_, s)| *s).collect();
        assert_eq!(scores, [1.0, 0.5, 1.0 / 3.0]);
    }

    #[test]
    fn round_robin_identical_lists_is_identity_order() {
        let l = list("t", &[("a", 0.9), ("b", 0.5), ("c", 0.1)]);
        let fused = round_robin_fuse(&[l.clone(), l.clone()]).unwrap();
        let ids: Vec<&str> = fused.entries().iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn fusers_reject_mixed_topics() {
        let l1 = list("t1", &[("a", 1.0)]);
        let l2 = list("t2", &[("b", 1.0)]);
        let w = WeightVector::equal(2).unwrap();
        assert!(linear_fuse(&w, &[l1, l2]).is_err());
    }
}
