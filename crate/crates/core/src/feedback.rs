//! Classification-based relevance feedback and residual filtering.
//!
//! For one topic, judged documents (title + abstract) become L2-normalized
//! tf-idf vectors with weights `(1 + ln tf) · idf`. A logistic regression is
//! fit by full-batch gradient descent on
//!
//! ```text
//! J(w, b) = (1/m) Σ_i [ln(1 + e^{z_i}) - y_i z_i] + (λ / 2m) ‖w‖²,   z_i = w·x_i + b
//! ```
//!
//! (the bias is not regularized). Candidates are then rescored by
//! `(1 - α) · minmax(score) + α · P(relevant | d)`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::fusion::RankedList;
use crate::index::{tokenize, InvertedIndex};
use crate::math;
use crate::rerank::DocumentStore;

pub const MAX_GRADE: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    pub grade: u8,
    /// Second qrels column, kept only for writing the file back.
    pub iteration: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeedbackError {
    #[error("topic {topic}: document {doc:?} judged twice")]
    DuplicateJudgment { topic: u32, doc: String },
    #[error("topic {0}: training needs both relevant and non-relevant judged documents; fall back to unmixed scores")]
    SingleClass(u32),
    #[error("mixing weight must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
}

/// Graded relevance judgments keyed by topic, then document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    topics: BTreeMap<u32, BTreeMap<String, Judgment>>,
}

/// Outcome of [`Qrels::insert`] when the grade had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clamped {
    pub original: i64,
    pub stored: u8,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a judgment. Grades outside `0..=2` are clamped; the clamp is
    /// reported so the caller can warn.
    pub fn insert(
        &mut self,
        topic: u32,
        iteration: impl Into<String>,
        doc: impl Into<String>,
        grade: i64,
    ) -> Result<Option<Clamped>, FeedbackError> {
        let doc = doc.into();
        let stored = grade.clamp(0, i64::from(MAX_GRADE)) as u8;
        let judged = self.topics.entry(topic).or_default();
        if judged.contains_key(&doc) {
            return Err(FeedbackError::DuplicateJudgment { topic, doc });
        }
        judged.insert(
            doc,
            Judgment {
                grade: stored,
                iteration: iteration.into(),
            },
        );
        Ok((i64::from(stored) != grade).then_some(Clamped {
            original: grade,
            stored,
        }))
    }

    pub fn grade(&self, topic: u32, doc: &str) -> Option<u8> {
        self.topics.get(&topic)?.get(doc).map(|j| j.grade)
    }

    pub fn is_judged(&self, topic: u32, doc: &str) -> bool {
        self.grade(topic, doc).is_some()
    }

    pub fn judgments(&self, topic: u32) -> Option<&BTreeMap<String, Judgment>> {
        self.topics.get(&topic)
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.topics.keys().copied()
    }

    /// Every judgment as `(topic, doc, judgment)`, topics ascending, docs ascending.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &str, &Judgment)> {
        self.topics
            .iter()
            .flat_map(|(&t, docs)| docs.iter().map(move |(d, j)| (t, d.as_str(), j)))
    }

    pub fn len(&self) -> usize {
        self.topics.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of documents with grade > 0.
    pub fn relevant_count(&self, topic: u32) -> usize {
        self.topics
            .get(&topic)
            .map_or(0, |d| d.values().filter(|j| j.grade > 0).count())
    }

    /// Union of two judgment sets; `self` wins on conflicts.
    pub fn union(&self, other: &Qrels) -> Qrels {
        let mut out = self.clone();
        for (t, d, j) in other.iter() {
            out.topics
                .entry(t)
                .or_default()
                .entry(d.to_string())
                .or_insert_with(|| j.clone());
        }
        out
    }

    /// Judgments of `self` on documents not judged in `prior`: the qrels that
    /// evaluate a residual run.
    pub fn residual(&self, prior: &Qrels) -> Qrels {
        let mut out = Qrels::new();
        for (t, d, j) in self.iter().filter(|(t, d, _)| !prior.is_judged(*t, d)) {
            out.topics
                .entry(t)
                .or_default()
                .insert(d.to_string(), j.clone());
        }
        out
    }
}

/// Drops every candidate judged (at any grade) for the list's topic and
/// renumbers ranks. Scores are left as they were.
pub fn residual_filter(candidates: &RankedList, qrels: &Qrels) -> RankedList {
    let mut out = candidates.clone();
    let topic = candidates.topic_id();
    out.retain(|e| !qrels.is_judged(topic, &e.doc_id));
    out
}

/// Sparse vector as `(dimension, value)` pairs sorted by dimension.
pub type SparseVector = Vec<(usize, f64)>;

/// L2-normalized `(1 + ln tf) · idf` vector over the in-vocabulary terms of `text`.
pub fn tfidf_vector(
    text: &str,
    vocabulary: &BTreeMap<String, usize>,
    idf: &BTreeMap<String, f64>,
) -> SparseVector {
    let mut tf: BTreeMap<usize, (u32, f64)> = BTreeMap::new();
    for token in tokenize(text) {
        if let Some(&dim) = vocabulary.get(&token) {
            let weight = idf.get(&token).copied().unwrap_or(0.0);
            tf.entry(dim).or_insert((0, weight)).0 += 1;
        }
    }
    let mut v: SparseVector = tf
        .into_iter()
        .map(|(dim, (count, idf))| (dim, (1.0 + math::ln(f64::from(count))) * idf))
        .filter(|&(_, x)| x != 0.0)
        .collect();
    let norm = math::sqrt(v.iter().map(|(_, x)| x * x).sum());
    if norm > 0.0 {
        for (_, x) in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once the gradient's ∞-norm falls below this.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            learning_rate: 0.5,
            max_iterations: 200,
            tolerance: 1e-6,
        }
    }
}

/// Weights and bias of a linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &[(usize, f64)]) -> f64 {
        self.bias + x.iter().map(|&(d, v)| self.weights[d] * v).sum::<f64>()
    }
}

/// The regularized logistic loss over a fixed training set.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProblem {
    pub features: Vec<SparseVector>,
    /// 0.0 or 1.0.
    pub labels: Vec<f64>,
    pub dim: usize,
    pub lambda: f64,
}

impl LogisticProblem {
    fn m(&self) -> f64 {
        self.features.len().max(1) as f64
    }

    pub fn loss(&self, params: &LinearParams) -> f64 {
        let data: f64 = self
            .features
            .iter()
            .zip(&self.labels)
            .map(|(x, &y)| {
                let z = params.logit(x);
                math::softplus(z) - y * z
            })
            .sum();
        let reg: f64 = params.weights.iter().map(|w| w * w).sum();
        (data + 0.5 * self.lambda * reg) / self.m()
    }

    pub fn gradient(&self, params: &LinearParams) -> LinearParams {
        let mut g = LinearParams::zeros(self.dim);
        for (x, &y) in self.features.iter().zip(&self.labels) {
            let r = math::sigmoid(params.logit(x)) - y;
            for &(d, v) in x {
                g.weights[d] += r * v;
            }
            g.bias += r;
        }
        let m = self.m();
        for (gw, w) in g.weights.iter_mut().zip(&params.weights) {
            *gw = (*gw + self.lambda * w) / m;
        }
        g.bias /= m;
        g
    }

    /// Gradient descent from zero. Returns the parameters and the loss before
    /// each step plus the final loss.
    pub fn fit(&self, config: &TrainConfig) -> (LinearParams, Vec<f64>) {
        let mut params = LinearParams::zeros(self.dim);
        let mut history = vec![self.loss(&params)];
        for _ in 0..config.max_iterations {
            let g = self.gradient(&params);
            let gmax = g
                .weights
                .iter()
                .map(|x| x.abs())
                .fold(g.bias.abs(), f64::max);
            if gmax < config.tolerance {
                break;
            }
            for (w, gw) in params.weights.iter_mut().zip(&g.weights) {
                *w -= config.learning_rate * gw;
            }
            params.bias -= config.learning_rate * g.bias;
            history.push(self.loss(&params));
        }
        (params, history)
    }
}

/// A per-topic relevance classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackModel {
    pub topic_id: u32,
    pub vocabulary: BTreeMap<String, usize>,
    pub idf_table: BTreeMap<String, f64>,
    pub params: LinearParams,
    /// Loss trace of the fit.
    pub loss_history: Vec<f64>,
}

impl FeedbackModel {
    pub fn vectorize(&self, text: &str) -> SparseVector {
        tfidf_vector(text, &self.vocabulary, &self.idf_table)
    }

    /// P(relevant | text).
    pub fn predict(&self, text: &str) -> f64 {
        math::sigmoid(self.params.logit(&self.vectorize(text)))
    }
}

/// Problem, vocabulary index and idf weights for one topic.
pub type TrainingSet = (
    LogisticProblem,
    BTreeMap<String, usize>,
    BTreeMap<String, f64>,
);

/// Training set of one topic: judged documents with available text, in doc
/// id order, over a vocabulary of their terms weighted by `idf_source`.
pub fn build_problem<D: DocumentStore + ?Sized>(
    topic_id: u32,
    qrels: &Qrels,
    docs: &D,
    idf_source: &InvertedIndex,
    lambda: f64,
) -> Result<TrainingSet, FeedbackError> {
    let mut texts = Vec::new();
    let mut labels = Vec::new();
    for (doc, j) in qrels.judgments(topic_id).into_iter().flatten() {
        if let Some(text) = docs.text(doc) {
            texts.push(text);
            labels.push(if j.grade > 0 { 1.0 } else { 0.0 });
        }
    }
    let positives = labels.iter().filter(|&&y| y > 0.0).count();
    if positives == 0 || positives == labels.len() {
        return Err(FeedbackError::SingleClass(topic_id));
    }

    let mut terms: Vec<String> = texts.iter().flat_map(|t| tokenize(t)).collect();
    terms.sort();
    terms.dedup();
    let idf_table: BTreeMap<String, f64> = terms
        .iter()
        .map(|t| (t.clone(), idf_source.idf(t)))
        .collect();
    let vocabulary: BTreeMap<String, usize> =
        terms.into_iter().enumerate().map(|(i, t)| (t, i)).collect();
    let features = texts
        .iter()
        .map(|t| tfidf_vector(t, &vocabulary, &idf_table))
        .collect();
    Ok((
        LogisticProblem {
            features,
            labels,
            dim: vocabulary.len(),
            lambda,
        },
        vocabulary,
        idf_table,
    ))
}

/// Fits the relevance classifier of one topic. Fails when the judged
/// documents do not cover both classes.
pub fn train_classifier<D: DocumentStore + ?Sized>(
    topic_id: u32,
    qrels: &Qrels,
    docs: &D,
    idf_source: &InvertedIndex,
    config: &TrainConfig,
) -> Result<FeedbackModel, FeedbackError> {
    let (problem, vocabulary, idf_table) =
        build_problem(topic_id, qrels, docs, idf_source, config.lambda)?;
    let (params, loss_history) = problem.fit(config);
    Ok(FeedbackModel {
        topic_id,
        vocabulary,
        idf_table,
        params,
        loss_history,
    })
}

/// Mixes min-max normalized candidate scores with classifier probabilities:
/// `(1 - α) · norm(score) + α · P(relevant | d)`. Ties keep the prior order.
pub fn classify_interpolate<D: DocumentStore + ?Sized>(
    model: &FeedbackModel,
    candidates: &RankedList,
    docs: &D,
    alpha: f64,
) -> Result<RankedList, FeedbackError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FeedbackError::InvalidAlpha(alpha));
    }
    let entries = candidates.entries();
    let (lo, hi) = entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.score), hi.max(e.score))
        });
    let scored: Vec<(String, f64, usize)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let norm = if hi > lo {
                (e.score - lo) / (hi - lo)
            } else {
                1.0
            };
            let p = model.predict(&docs.text(&e.doc_id).unwrap_or_default());
            (e.doc_id.clone(), (1.0 - alpha) * norm + alpha * p, i)
        })
        .collect();
    Ok(
        RankedList::from_unsorted(candidates.topic_id(), candidates.tag(), scored)
            .expect("interpolated scores are finite and ids come from a valid list"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Granularity, RetrievalUnit};
    use alloc::format;

    fn index(texts: &[(&str, &str)]) -> InvertedIndex {
        let units: Vec<RetrievalUnit> = texts
            .iter()
            .map(|(id, t)| RetrievalUnit {
                unit_id: id.to_string(),
                article_id: id.to_string(),
                granularity: Granularity::Abstract,
                text: t.to_string(),
                paragraph_index: None,
            })
            .collect();
        InvertedIndex::build(Granularity::Abstract, &units).unwrap()
    }

    fn list(entries: &[(&str, f64)]) -> RankedList {
        RankedList::from_sorted(7, "t", entries.iter().map(|&(d, s)| (d, s))).unwrap()
    }

    #[test]
    fn qrels_insert_and_clamp() {
        let mut q = Qrels::new();
        assert_eq!(q.insert(1, "0", "a", 2), Ok(None));
        assert_eq!(
            q.insert(1, "0", "b", 4),
            Ok(Some(Clamped {
                original: 4,
                stored: 2
            }))
        );
        assert_eq!(
            q.insert(1, "0", "c", -1),
            Ok(Some(Clamped {
                original: -1,
                stored: 0
            }))
        );
        assert!(matches!(
            q.insert(1, "1", "a", 0),
            Err(FeedbackError::DuplicateJudgment { .. })
        ));
        assert_eq!(q.grade(1, "b"), Some(2));
        assert_eq!(q.relevant_count(1), 2);
        assert_eq!(q.len(), 3);
        assert!(!q.is_judged(2, "a"));
    }

    #[test]
    fn residual_filter_cases() {
        let mut q = Qrels::new();
        q.insert(7, "1", "b", 0).unwrap();
        let cands = list(&[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        let out = residual_filter(&cands, &q);
        assert_eq!(out.doc_ids().collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(out.entries()[1].rank, 2);
        assert_eq!(out.entries()[1].score, 1.0);

        assert_eq!(residual_filter(&cands, &Qrels::new()), cands);

        let mut all = Qrels::new();
        for d in ["a", "b", "c"] {
            all.insert(7, "1", d, 1).unwrap();
        }
        assert!(residual_filter(&cands, &all).is_empty());
    }

    #[test]
    fn residual_qrels_drop_prior_judgments() {
        let mut prior = Qrels::new();
        prior.insert(1, "1", "a", 1).unwrap();
        let mut later = Qrels::new();
        later.insert(1, "2", "a", 2).unwrap();
        later.insert(1, "2", "b", 1).unwrap();
        let r = later.residual(&prior);
        assert_eq!(r.len(), 1);
        assert_eq!(r.grade(1, "b"), Some(1));
        assert_eq!(prior.union(&later).grade(1, "a"), Some(1));
    }

    #[test]
    fn tfidf_single_term_is_unit() {
        let vocab: BTreeMap<String, usize> = [("x".to_string(), 0), ("y".to_string(), 1)]
            .into_iter()
            .collect();
        let idf: BTreeMap<String, f64> = [("x".to_string(), 2.0), ("y".to_string(), 3.0)]
            .into_iter()
            .collect();
        assert_eq!(tfidf_vector("x x other", &vocab, &idf), [(0, 1.0)]);
        assert!(tfidf_vector("nothing here", &vocab, &idf).is_empty());

        let v = tfidf_vector("x y y", &vocab, &idf);
        let raw = [2.0, (1.0 + libm::log(2.0)) * 3.0];
        let norm = libm::sqrt(raw[0] * raw[0] + raw[1] * raw[1]);
        assert!((v[0].1 - raw[0] / norm).abs() < 1e-15);
        assert!((v[1].1 - raw[1] / norm).abs() < 1e-15);
    }

    fn separable() -> (InvertedIndex, Qrels) {
        let idx = index(&[
            ("p1", "antibody serology igg"),
            ("n1", "ventilation masks airflow"),
            ("x1", "unrelated filler text"),
        ]);
        let mut q = Qrels::new();
        q.insert(7, "1", "p1", 2).unwrap();
        q.insert(7, "1", "n1", 0).unwrap();
        (idx, q)
    }

    #[test]
    fn separable_pair_is_learned() {
        let (idx, q) = separable();
        let m = train_classifier(7, &q, &idx, &idx, &TrainConfig::default()).unwrap();
        assert!(m.predict("antibody serology igg") > 0.5);
        assert!(m.predict("ventilation masks airflow") < 0.5);
        assert_eq!(m.params.weights.len(), m.vocabulary.len());
        assert!(m.params.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn single_class_is_rejected() {
        let (idx, _) = separable();
        let mut q = Qrels::new();
        q.insert(7, "1", "p1", 1).unwrap();
        q.insert(7, "1", "n1", 2).unwrap();
        assert_eq!(
            train_classifier(7, &q, &idx, &idx, &TrainConfig::default()),
            Err(FeedbackError::SingleClass(7))
        );
        assert_eq!(
            train_classifier(8, &q, &idx, &idx, &TrainConfig::default()),
            Err(FeedbackError::SingleClass(8))
        );
    }

    #[test]
    fn training_is_deterministic() {
        let (idx, q) = separable();
        let a = train_classifier(7, &q, &idx, &idx, &TrainConfig::default()).unwrap();
        let b = train_classifier(7, &q, &idx, &idx, &TrainConfig::default()).unwrap();
        let bits = |m: &FeedbackModel| {
            m.params
                .weights
                .iter()
                .map(|w| w.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.params.bias.to_bits(), b.params.bias.to_bits());
    }

    #[test]
    fn interpolation_arithmetic_and_extremes() {
        let (idx, q) = separable();
        let m = train_classifier(7, &q, &idx, &idx, &TrainConfig::default()).unwrap();
        let cands = list(&[("n1", 10.0), ("x1", 5.0), ("p1", 0.0)]);

        let same = classify_interpolate(&m, &cands, &idx, 0.0).unwrap();
        assert_eq!(same.doc_ids().collect::<Vec<_>>(), ["n1", "x1", "p1"]);
        assert_eq!(same.entries()[1].score, 0.5);

        let by_model = classify_interpolate(&m, &cands, &idx, 1.0).unwrap();
        assert_eq!(by_model.entries()[0].doc_id, "p1");
        assert_eq!(
            by_model.entries()[0].score,
            m.predict("antibody serology igg")
        );

        let half = classify_interpolate(&m, &cands, &idx, 0.5).unwrap();
        let x1 = half.get("x1").unwrap().score;
        assert!((x1 - (0.5 * 0.5 + 0.5 * m.predict("unrelated filler text"))).abs() < 1e-15);

        assert_eq!(
            classify_interpolate(&m, &cands, &idx, 1.5),
            Err(FeedbackError::InvalidAlpha(1.5))
        );
    }

    #[test]
    fn loss_decreases_on_small_set() {
        let texts: Vec<(String, String)> = (0..6)
            .map(|i| {
                let t = if i % 2 == 0 {
                    format!("spike receptor binding ace2 variant{i}")
                } else {
                    format!("hospital capacity planning model{i}")
                };
                (format!("d{i}"), t)
            })
            .collect();
        let refs: Vec<(&str, &str)> = texts
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        let idx = index(&refs);
        let mut q = Qrels::new();
        for i in 0..6 {
            q.insert(1, "0", format!("d{i}"), if i % 2 == 0 { 1 } else { 0 })
                .unwrap();
        }
        let m = train_classifier(1, &q, &idx, &idx, &TrainConfig::default()).unwrap();
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(m.loss_history.last().unwrap() < &m.loss_history[0]);
    }
}
