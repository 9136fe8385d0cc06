//! TREC-style evaluation: nDCG@k, P@k, average precision and judged@k.
//!
//! Conventions follow trec_eval: nDCG uses the raw grade as gain with a
//! `log2(rank + 1)` discount, unjudged documents count as non-relevant, and a
//! document is relevant for P@k and AP when its grade is above zero. Metrics
//! read the ranking in list order.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::feedback::Qrels;
use crate::fusion::RankedList;
use crate::math;

pub const EVAL_DEPTH: usize = 1000;

/// Metric columns of an evaluation report, in output order.
pub const METRICS: [&str; 4] = ["ndcg@10", "p@5", "map", "judged@5"];

fn grade_at(list: &RankedList, qrels: &Qrels, i: usize) -> u8 {
    qrels
        .grade(list.topic_id(), &list.entries()[i].doc_id)
        .unwrap_or(0)
}

/// nDCG@k, or `None` when the topic has no relevant judgment.
pub fn ndcg_at_k(list: &RankedList, qrels: &Qrels, k: usize) -> Option<f64> {
    let mut ideal: Vec<u8> = qrels
        .judgments(list.topic_id())?
        .values()
        .map(|j| j.grade)
        .collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let discount = |i: usize| math::log2(i as f64 + 2.0);
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / discount(i))
        .sum();
    if idcg <= 0.0 {
        return None;
    }
    let dcg: f64 = (0..list.len().min(k))
        .map(|i| f64::from(grade_at(list, qrels, i)) / discount(i))
        .sum();
    Some(dcg / idcg)
}

/// Fraction of the top `k` that is relevant; `k` is always the divisor.
pub fn precision_at_k(list: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = (0..list.len().min(k))
        .filter(|&i| grade_at(list, qrels, i) > 0)
        .count();
    hits as f64 / k as f64
}

/// Fraction of the top `k` with any judgment; `k` is always the divisor.
pub fn judged_at_k(list: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let judged = list
        .doc_ids()
        .take(k)
        .filter(|d| qrels.is_judged(list.topic_id(), d))
        .count();
    judged as f64 / k as f64
}

/// Average precision over the first `depth` entries, or `None` when the topic
/// has no relevant judgment.
pub fn average_precision(list: &RankedList, qrels: &Qrels, depth: usize) -> Option<f64> {
    let total = qrels.relevant_count(list.topic_id());
    if total == 0 {
        return None;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for i in 0..list.len().min(depth) {
        if grade_at(list, qrels, i) > 0 {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Per-topic runs with a shared tag, topics ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFile {
    pub tag: String,
    pub topics: BTreeMap<u32, RankedList>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            topics: BTreeMap::new(),
        }
    }

    /// Adds a topic's list, retagging it with the run tag.
    pub fn insert(&mut self, list: RankedList) {
        let list = list.with_tag(self.tag.clone());
        self.topics.insert(list.topic_id(), list);
    }

    pub fn get(&self, topic: u32) -> Option<&RankedList> {
        self.topics.get(&topic)
    }

    pub fn lists(&self) -> impl Iterator<Item = &RankedList> {
        self.topics.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicMetrics {
    pub topic_id: u32,
    pub ndcg_10: f64,
    pub p_5: f64,
    pub ap: f64,
    pub judged_5: f64,
}

impl TopicMetrics {
    /// Values in [`METRICS`] order.
    pub fn values(&self) -> [f64; 4] {
        [self.ndcg_10, self.p_5, self.ap, self.judged_5]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// The run has the topic but the qrels do not.
    NotJudged,
    /// The qrels judge the topic but none of its documents is relevant.
    NoRelevant,
    /// The qrels judge the topic but the run does not contain it.
    NotInRun,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<TopicMetrics>,
    pub skipped: Vec<(u32, SkipReason)>,
}

impl EvalReport {
    /// Means over evaluated topics in [`METRICS`] order; zeros when nothing was evaluated.
    pub fn means(&self) -> [f64; 4] {
        let mut sums = [0.0; 4];
        for row in &self.rows {
            for (s, v) in sums.iter_mut().zip(row.values()) {
                *s += v;
            }
        }
        let n = self.rows.len().max(1) as f64;
        sums.map(|s| s / n)
    }
}

/// Scores every run topic that has relevant judgments.
pub fn evaluate(run: &RunFile, qrels: &Qrels) -> EvalReport {
    let mut report = EvalReport::default();
    for list in run.lists() {
        let topic = list.topic_id();
        if qrels.judgments(topic).is_none() {
            report.skipped.push((topic, SkipReason::NotJudged));
            continue;
        }
        let (Some(ndcg_10), Some(ap)) = (
            ndcg_at_k(list, qrels, 10),
            average_precision(list, qrels, EVAL_DEPTH),
        ) else {
            report.skipped.push((topic, SkipReason::NoRelevant));
            continue;
        };
        report.rows.push(TopicMetrics {
            topic_id: topic,
            ndcg_10,
            p_5: precision_at_k(list, qrels, 5),
            ap,
            judged_5: judged_at_k(list, qrels, 5),
        });
    }
    for topic in qrels.topic_ids().filter(|t| run.get(*t).is_none()) {
        report.skipped.push((topic, SkipReason::NotInRun));
    }
    report.skipped.sort_by_key(|&(t, _)| t);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(docs: &[&str]) -> RankedList {
        RankedList::from_sorted(
            1,
            "t",
            docs.iter().enumerate().map(|(i, d)| (*d, -(i as f64))),
        )
        .unwrap()
    }

    fn qrels(j: &[(&str, i64)]) -> Qrels {
        let mut q = Qrels::new();
        for &(d, g) in j {
            q.insert(1, "0", d, g).unwrap();
        }
        q
    }

    #[test]
    fn ndcg_cases() {
        let q = qrels(&[("r", 2), ("n", 0)]);
        assert_eq!(ndcg_at_k(&list(&["r", "x"]), &q, 10), Some(1.0));
        let q = qrels(&[("r", 1)]);
        let v = ndcg_at_k(&list(&["x", "r"]), &q, 10).unwrap();
        assert!((v - 0.6309).abs() < 1e-4);
        assert!((v - 1.0 / libm::log2(3.0)).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&list(&["x", "y"]), &q, 10), Some(0.0));
        assert_eq!(ndcg_at_k(&list(&["x"]), &qrels(&[("n", 0)]), 10), None);
        assert_eq!(ndcg_at_k(&list(&["x"]), &Qrels::new(), 10), None);
    }

    #[test]
    fn precision_cases() {
        let q = qrels(&[("a", 1), ("b", 2), ("c", 0)]);
        assert_eq!(
            precision_at_k(&list(&["a", "x", "b", "c", "y"]), &q, 5),
            0.4
        );
        assert_eq!(precision_at_k(&list(&[]), &q, 5), 0.0);
        let q = qrels(&[("a", 1), ("b", 1), ("c", 1), ("d", 1), ("e", 1)]);
        assert_eq!(
            precision_at_k(&list(&["a", "b", "c", "d", "e"]), &q, 5),
            1.0
        );
        assert_eq!(precision_at_k(&list(&["a"]), &q, 5), 0.2);
    }

    #[test]
    fn average_precision_cases() {
        let q = qrels(&[("a", 1), ("c", 1)]);
        let ap = average_precision(&list(&["a", "b", "c"]), &q, 1000).unwrap();
        assert!((ap - 0.8333).abs() < 1e-4);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let q = qrels(&[("b", 2)]);
        assert_eq!(average_precision(&list(&["a", "b"]), &q, 1000), Some(0.5));
        let q = qrels(&[("a", 1), ("b", 1)]);
        assert_eq!(
            average_precision(&list(&["a", "b", "z"]), &q, 1000),
            Some(1.0)
        );
        assert_eq!(
            average_precision(&list(&["a"]), &qrels(&[("a", 0)]), 1000),
            None
        );
        // depth cuts the ranking
        assert_eq!(
            average_precision(&list(&["z", "a"]), &qrels(&[("a", 1)]), 1),
            Some(0.0)
        );
    }

    #[test]
    fn judged_cases() {
        let q = qrels(&[("a", 0), ("b", 1), ("c", 0), ("d", 2), ("e", 0)]);
        assert_eq!(judged_at_k(&list(&["a", "b", "c", "d", "e"]), &q, 5), 1.0);
        assert_eq!(judged_at_k(&list(&["v", "w", "x", "y", "z"]), &q, 5), 0.0);
        assert_eq!(judged_at_k(&list(&["a", "x", "b", "y", "c"]), &q, 5), 0.6);
    }

    #[test]
    fn evaluate_reports_and_skips() {
        let mut q = qrels(&[("a", 1)]);
        q.insert(2, "0", "z", 0).unwrap();
        q.insert(3, "0", "k", 1).unwrap();
        let mut run = RunFile::new("r");
        run.insert(list(&["a", "b"]));
        run.insert(RankedList::from_sorted(2, "x", [("z", 1.0)]).unwrap());
        run.insert(RankedList::from_sorted(4, "x", [("q", 1.0)]).unwrap());
        let report = evaluate(&run, &q);
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].values(), [1.0, 0.2, 1.0, 0.2]);
        assert_eq!(
            report.skipped,
            [
                (2, SkipReason::NoRelevant),
                (3, SkipReason::NotInRun),
                (4, SkipReason::NotJudged)
            ]
        );
        assert_eq!(report.means(), [1.0, 0.2, 1.0, 0.2]);
        assert_eq!(run.get(4).unwrap().tag(), "r");
    }
}
