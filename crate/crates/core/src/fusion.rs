//! Ranked lists, paragraph-to-article aggregation and reciprocal rank fusion.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::parse_unit_id;
use crate::index::{Hit, InvertedIndex};
use crate::math;
use crate::topics::{generate_query, QueryRepresentation, Topic};

/// Default RRF smoothing constant.
pub const DEFAULT_K_RRF: f64 = 60.0;
/// Default run depth.
pub const DEFAULT_DEPTH: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub doc_id: String,
    /// 1-based.
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RankedListError {
    #[error("topic {topic}: duplicate document {doc:?}")]
    DuplicateDoc { topic: u32, doc: String },
    #[error("topic {topic}: score of {doc:?} increases over the previous entry")]
    IncreasingScore { topic: u32, doc: String },
    #[error("topic {topic}: score of {doc:?} is not a number")]
    NanScore { topic: u32, doc: String },
}

/// A per-topic ranking. Ranks run 1..=len, scores never increase with rank
/// and document ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    topic_id: u32,
    tag: String,
    entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn empty(topic_id: u32, tag: impl Into<String>) -> Self {
        Self {
            topic_id,
            tag: tag.into(),
            entries: Vec::new(),
        }
    }

    /// Builds a list from `(doc_id, score)` pairs already in rank order.
    pub fn from_sorted<I, S>(
        topic_id: u32,
        tag: impl Into<String>,
        scored: I,
    ) -> Result<Self, RankedListError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut seen = BTreeSet::new();
        let mut entries: Vec<RankedEntry> = Vec::new();
        for (doc, score) in scored {
            let doc = doc.into();
            if score.is_nan() {
                return Err(RankedListError::NanScore {
                    topic: topic_id,
                    doc,
                });
            }
            if entries.last().is_some_and(|prev| score > prev.score) {
                return Err(RankedListError::IncreasingScore {
                    topic: topic_id,
                    doc,
                });
            }
            if !seen.insert(doc.clone()) {
                return Err(RankedListError::DuplicateDoc {
                    topic: topic_id,
                    doc,
                });
            }
            entries.push(RankedEntry {
                rank: entries.len() + 1,
                doc_id: doc,
                score,
            });
        }
        Ok(Self {
            topic_id,
            tag: tag.into(),
            entries,
        })
    }

    /// Sorts `(doc_id, score, tiebreak)` triples by descending score, then by
    /// ascending tiebreak key, and builds the list.
    pub(crate) fn from_unsorted<K: Ord>(
        topic_id: u32,
        tag: impl Into<String>,
        mut scored: Vec<(String, f64, K)>,
    ) -> Result<Self, RankedListError> {
        scored.sort_by(|a, b| math::desc(a.1, b.1).then_with(|| a.2.cmp(&b.2)));
        Self::from_sorted(topic_id, tag, scored.into_iter().map(|(d, s, _)| (d, s)))
    }

    /// Converts index hits (already ranked) into a list keyed by unit id.
    pub fn from_hits(topic_id: u32, tag: impl Into<String>, hits: &[Hit<'_>]) -> Self {
        Self {
            topic_id,
            tag: tag.into(),
            entries: hits
                .iter()
                .enumerate()
                .map(|(i, h)| RankedEntry {
                    doc_id: h.unit.unit_id.clone(),
                    rank: i + 1,
                    score: h.score,
                })
                .collect(),
        }
    }

    pub fn topic_id(&self) -> u32 {
        self.topic_id
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn get(&self, doc_id: &str) -> Option<&RankedEntry> {
        self.entries.iter().find(|e| e.doc_id == doc_id)
    }

    pub fn truncate(&mut self, depth: usize) {
        self.entries.truncate(depth);
    }

    /// Keeps the entries matching `keep`, renumbering ranks; scores are untouched.
    pub fn retain(&mut self, mut keep: impl FnMut(&RankedEntry) -> bool) {
        self.entries.retain(|e| keep(e));
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.rank = i + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("malformed unit id {doc:?} at rank {rank}")]
    MalformedUnitId { doc: String, rank: usize },
    #[error("input lists disagree on topic ({0} vs {1})")]
    TopicMismatch(u32, u32),
    #[error("no input lists to fuse")]
    NoInputs,
    #[error("k_rrf must be positive, got {0}")]
    InvalidK(f64),
    #[error(transparent)]
    List(#[from] RankedListError),
}

/// Collapses a paragraph-level list to articles, scoring each article by its
/// best unit. Ties go to the smaller article id.
pub fn max_aggregate(list: &RankedList) -> Result<RankedList, FusionError> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for e in &list.entries {
        let (article, _) =
            parse_unit_id(&e.doc_id).ok_or_else(|| FusionError::MalformedUnitId {
                doc: e.doc_id.clone(),
                rank: e.rank,
            })?;
        best.entry(article)
            .and_modify(|s| *s = s.max(e.score))
            .or_insert(e.score);
    }
    let scored = best
        .into_iter()
        .map(|(a, s)| (a.to_string(), s, a.to_string()))
        .collect();
    Ok(RankedList::from_unsorted(
        list.topic_id,
        list.tag.clone(),
        scored,
    )?)
}

/// Reciprocal rank fusion: each document scores `Σ 1 / (k_rrf + rank)` over the
/// input lists that rank it within `depth`. Output is truncated to `depth`,
/// ties broken by ascending doc id. The sum is taken over contributions in
/// ascending order, which makes the result independent of input order.
pub fn rrf(lists: &[RankedList], k_rrf: f64, depth: usize) -> Result<RankedList, FusionError> {
    let first = lists.first().ok_or(FusionError::NoInputs)?;
    if k_rrf.is_nan() || k_rrf <= 0.0 {
        return Err(FusionError::InvalidK(k_rrf));
    }
    if let Some(other) = lists.iter().find(|l| l.topic_id != first.topic_id) {
        return Err(FusionError::TopicMismatch(first.topic_id, other.topic_id));
    }
    let mut contributions: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for list in lists {
        for e in list.entries.iter().filter(|e| e.rank <= depth) {
            contributions
                .entry(&e.doc_id)
                .or_default()
                .push(1.0 / (k_rrf + e.rank as f64));
        }
    }
    let scored = contributions
        .into_iter()
        .map(|(doc, mut parts)| {
            parts.sort_by(|a, b| a.total_cmp(b));
            (doc.to_string(), parts.iter().sum(), doc.to_string())
        })
        .collect();
    let mut fused = RankedList::from_unsorted(first.topic_id, "rrf", scored)?;
    fused.truncate(depth);
    Ok(fused)
}

/// The three indexes a fusion run searches.
#[derive(Debug, Clone, Copy)]
pub struct FusionIndexes<'a> {
    pub abstracts: &'a InvertedIndex,
    pub fulltext: &'a InvertedIndex,
    pub paragraph: &'a InvertedIndex,
}

/// Query representation choice of a fusion run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionVariant {
    /// Query field only.
    Fusion1,
    /// Query field plus question terms with idf ≥ `theta` in the abstract index.
    Fusion2 { theta: f64 },
}

impl FusionVariant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fusion1 => "fusion1",
            Self::Fusion2 { .. } => "fusion2",
        }
    }

    pub fn query(&self, topic: &Topic, indexes: &FusionIndexes<'_>) -> QueryRepresentation {
        let theta = match *self {
            Self::Fusion1 => f64::INFINITY,
            Self::Fusion2 { theta } => theta,
        };
        generate_query(topic, indexes.abstracts, theta)
    }
}

/// Searches all three indexes to `depth` with one query representation,
/// max-aggregates the paragraph hits and fuses the article-level lists.
pub fn fuse_indexes(
    query: &QueryRepresentation,
    indexes: &FusionIndexes<'_>,
    depth: usize,
    k_rrf: f64,
) -> Result<RankedList, FusionError> {
    let tokens = query.tokens();
    let topic = query.topic_id;
    let abstracts = RankedList::from_hits(
        topic,
        "abstract",
        &indexes.abstracts.search_tokens(&tokens, depth),
    );
    let fulltext = RankedList::from_hits(
        topic,
        "fulltext",
        &indexes.fulltext.search_tokens(&tokens, depth),
    );
    let paragraph = max_aggregate(&RankedList::from_hits(
        topic,
        "paragraph",
        &indexes.paragraph.search_tokens(&tokens, depth),
    ))?;
    rrf(&[abstracts, fulltext, paragraph], k_rrf, depth)
}

/// The fusion1 / fusion2 baseline for one topic.
pub fn fusion_run(
    topic: &Topic,
    indexes: &FusionIndexes<'_>,
    variant: FusionVariant,
    depth: usize,
    k_rrf: f64,
) -> Result<RankedList, FusionError> {
    let query = variant.query(topic, indexes);
    Ok(fuse_indexes(&query, indexes, depth, k_rrf)?.with_tag(variant.name()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(topic: u32, entries: &[(&str, f64)]) -> RankedList {
        RankedList::from_sorted(topic, "t", entries.iter().map(|&(d, s)| (d, s))).unwrap()
    }

    #[test]
    fn from_sorted_enforces_invariants() {
        assert!(matches!(
            RankedList::from_sorted(1, "t", [("a", 1.0), ("b", 2.0)]),
            Err(RankedListError::IncreasingScore { .. })
        ));
        assert!(matches!(
            RankedList::from_sorted(1, "t", [("a", 2.0), ("a", 1.0)]),
            Err(RankedListError::DuplicateDoc { .. })
        ));
        assert!(matches!(
            RankedList::from_sorted(1, "t", [("a", f64::NAN)]),
            Err(RankedListError::NanScore { .. })
        ));
        let l = list(1, &[("a", 2.0), ("b", 2.0), ("c", 1.0)]);
        let ranks: Vec<_> = l.entries().iter().map(|e| e.rank).collect();
        assert_eq!(ranks, [1, 2, 3]);
    }

    #[test]
    fn retain_renumbers() {
        let mut l = list(1, &[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        l.retain(|e| e.doc_id != "a");
        assert_eq!(l.entries()[0].rank, 1);
        assert_eq!(l.entries()[0].doc_id, "b");
        assert_eq!(l.entries()[1].rank, 2);
        assert_eq!(l.entries()[1].score, 1.0);
    }

    #[test]
    fn max_aggregate_takes_best_paragraph() {
        let l = list(3, &[("a1.3", 7.0), ("a2", 6.0), ("a1.0", 5.0)]);
        let agg = max_aggregate(&l).unwrap();
        let got: Vec<_> = agg
            .entries()
            .iter()
            .map(|e| (e.doc_id.as_str(), e.score))
            .collect();
        assert_eq!(got, [("a1", 7.0), ("a2", 6.0)]);
        assert_eq!(agg.topic_id(), 3);
    }

    #[test]
    fn max_aggregate_distinct_articles_and_empty() {
        let l = list(1, &[("x", 3.0), ("y.2", 2.0), ("z", 1.0)]);
        let agg = max_aggregate(&l).unwrap();
        assert_eq!(agg.doc_ids().collect::<Vec<_>>(), ["x", "y", "z"]);
        assert!(max_aggregate(&RankedList::empty(1, "t"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn max_aggregate_rejects_malformed_ids() {
        let l = list(1, &[("ok", 3.0), ("bad.", 2.0)]);
        assert_eq!(
            max_aggregate(&l),
            Err(FusionError::MalformedUnitId {
                doc: "bad.".into(),
                rank: 2
            })
        );
    }

    #[test]
    fn rrf_formula() {
        let a = list(1, &[("d", 9.0), ("e", 1.0)]);
        let b = list(1, &[("d", 0.3)]);
        let fused = rrf(&[a, b], 60.0, 1000).unwrap();
        assert_eq!(fused.entries()[0].doc_id, "d");
        assert!((fused.entries()[0].score - 2.0 / 61.0).abs() < 1e-15);
        assert!((fused.entries()[0].score - 0.032787).abs() < 1e-6);
        assert_eq!(fused.entries()[1].score, 1.0 / 62.0);
    }

    #[test]
    fn rrf_single_list_preserves_order() {
        let a = list(1, &[("p", 5.0), ("q", 4.0), ("r", 4.0)]);
        let fused = rrf(core::slice::from_ref(&a), 60.0, 1000).unwrap();
        assert_eq!(fused.doc_ids().collect::<Vec<_>>(), ["p", "q", "r"]);
        for (i, e) in fused.entries().iter().enumerate() {
            assert_eq!(e.score, 1.0 / (60.0 + (i + 1) as f64));
        }
    }

    #[test]
    fn rrf_depth_and_errors() {
        let a = list(1, &[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        let fused = rrf(core::slice::from_ref(&a), 60.0, 2).unwrap();
        assert_eq!(fused.len(), 2);
        let other = list(2, &[("a", 1.0)]);
        assert_eq!(
            rrf(&[a.clone(), other], 60.0, 10),
            Err(FusionError::TopicMismatch(1, 2))
        );
        assert_eq!(rrf(&[], 60.0, 10), Err(FusionError::NoInputs));
        assert!(matches!(rrf(&[a], 0.0, 10), Err(FusionError::InvalidK(_))));
    }

    #[test]
    fn rrf_only_counts_entries_within_depth() {
        let a = list(1, &[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        let b = list(1, &[("c", 3.0)]);
        let fused = rrf(&[a, b], 60.0, 2).unwrap();
        // c is rank 3 in the first list, beyond depth 2
        assert_eq!(fused.get("c").unwrap().score, 1.0 / 61.0);
        assert_eq!(fused.doc_ids().collect::<Vec<_>>(), ["a", "c"]);
    }
}
