//! Second- and third-stage rerankers.
//!
//! **Pointwise.** Each candidate's text is cut into windows of 10 sentences
//! taken every 5 sentences; a window whose sentences all belong to the
//! previous window is dropped. Every window, truncated to `max_tokens`
//! whitespace tokens, is scored independently with the prompt
//! `Query: {q} Document: {d} Relevant:` and the document takes the highest
//! window probability.
//!
//! **Pairwise.** For the top 50 pointwise candidates, represented by their
//! best window, the scorer estimates `p[i][j]`, the probability that `i` is
//! more relevant than `j`, from `Query: {q} Document0: {d_i} Document1: {d_j} Relevant:`.
//! Candidate `i` scores `s_i = Σ_{j≠i} (p[i][j] + (1 - p[j][i]))`.
//!
//! Candidates below the reranked block keep their relative order and get
//! scores `m - (j + 1) / (r + 1)` for the `j`-th of `r` tail entries, where
//! `m` is the lowest reranked score.
//!
//! **Reference scorer.** A deterministic lexical stand-in for the neural
//! models. With `T(x)` the distinct tokens of `x` and `Q` the non-stopword
//! tokens of the query (all query tokens if none remain):
//!
//! ```text
//! coverage(q, d) = Σ_{t ∈ Q ∩ T(d)} idf(t) / Σ_{t ∈ Q} idf(t)     (0 when Q is empty)
//! pointwise(q, d) = grid(σ(8 · coverage - 4))
//! pairwise(q, a, b) = grid(σ(x))          if x = pointwise(q, a) - pointwise(q, b) ≥ 0
//!                   = 1 - grid(σ(-x))     otherwise
//! ```
//!
//! `grid` rounds to a multiple of 2⁻²⁰. Grid values make `pairwise(q, a, b) + pairwise(q, b, a) = 1`
//! hold exactly in floating point, and sums of up to a few thousand of them
//! are exact.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use crate::corpus::split_sentences;
use crate::fusion::{RankedEntry, RankedList};
use crate::index::{for_each_token, tokenize, InvertedIndex};
use crate::math;
use crate::topics::is_stopword;

pub const WINDOW_SENTENCES: usize = 10;
pub const WINDOW_STRIDE: usize = 5;
pub const DEFAULT_RERANK_DEPTH: usize = 96;
pub const DEFAULT_MAX_TOKENS: usize = 256;
/// Candidates considered by the pairwise stage.
pub const PAIRWISE_CANDIDATES: usize = 50;

/// Sentence index ranges of the windows over `sentence_count` sentences.
pub fn window_ranges(sentence_count: usize) -> Vec<Range<usize>> {
    let mut windows: Vec<Range<usize>> = Vec::new();
    let mut start = 0;
    while start < sentence_count {
        let end = (start + WINDOW_SENTENCES).min(sentence_count);
        // windows only move forward, so containment in any earlier window
        // means containment in the last kept one
        if windows.last().is_none_or(|prev| end > prev.end) {
            windows.push(start..end);
        }
        start += WINDOW_STRIDE;
    }
    windows
}

/// Window texts of `text`, sentences joined by single spaces.
pub fn make_windows(text: &str) -> Vec<String> {
    let sentences = split_sentences(text);
    window_ranges(sentences.len())
        .into_iter()
        .map(|r| sentences[r].join(" "))
        .collect()
}

/// The prefix of `text` holding at most `max_tokens` whitespace-delimited tokens.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let mut count = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if count == max_tokens {
                return text[..i].trim_end();
            }
            count += 1;
            in_token = true;
        }
    }
    text
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointwiseRequest<'a> {
    pub query: &'a str,
    pub passage: &'a str,
}

impl PointwiseRequest<'_> {
    pub fn prompt(&self) -> String {
        format!("Query: {} Document: {} Relevant:", self.query, self.passage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairwiseRequest<'a> {
    pub query: &'a str,
    pub passage_a: &'a str,
    pub passage_b: &'a str,
}

impl PairwiseRequest<'_> {
    pub fn prompt(&self) -> String {
        format!(
            "Query: {} Document0: {} Document1: {} Relevant:",
            self.query, self.passage_a, self.passage_b
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScorerError {
    #[error("scorer returned {got} scores for a batch of {expected}")]
    CountMismatch { expected: usize, got: usize },
    #[error("scorer returned invalid score {score} at batch index {index}")]
    InvalidScore { index: usize, score: f64 },
    #[error("scorer protocol error at batch index {index}: {message}")]
    Protocol { index: usize, message: String },
    #[error("scorer channel closed at batch index {index}")]
    Closed { index: usize },
    #[error("scorer timed out at batch index {index}")]
    Timeout { index: usize },
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
}

/// A relevance model. Implementations return one probability in `[0, 1]` per
/// request, in request order.
pub trait Scorer {
    fn pointwise(&self, batch: &[PointwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError>;
    fn pairwise(&self, batch: &[PairwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn pointwise(&self, batch: &[PointwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
        (**self).pointwise(batch)
    }
    fn pairwise(&self, batch: &[PairwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
        (**self).pairwise(batch)
    }
}

impl<S: Scorer + ?Sized> Scorer for alloc::sync::Arc<S> {
    fn pointwise(&self, batch: &[PointwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
        (**self).pointwise(batch)
    }
    fn pairwise(&self, batch: &[PairwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
        (**self).pairwise(batch)
    }
}

fn checked(scores: Vec<f64>, expected: usize) -> Result<Vec<f64>, ScorerError> {
    if scores.len() != expected {
        return Err(ScorerError::CountMismatch {
            expected,
            got: scores.len(),
        });
    }
    if let Some((index, &score)) = scores
        .iter()
        .enumerate()
        .find(|(_, s)| !(0.0..=1.0).contains(*s))
    {
        return Err(ScorerError::InvalidScore { index, score });
    }
    Ok(scores)
}

/// Text lookup for candidate documents.
pub trait DocumentStore {
    fn text(&self, doc_id: &str) -> Option<Cow<'_, str>>;

    /// Reranker windows of a document, each truncated to `max_tokens`.
    fn windows(&self, doc_id: &str, max_tokens: usize) -> Option<Vec<Cow<'_, str>>> {
        let text = self.text(doc_id)?;
        Some(
            make_windows(&text)
                .iter()
                .map(|w| Cow::Owned(truncate_tokens(w, max_tokens).to_string()))
                .collect(),
        )
    }
}

impl DocumentStore for InvertedIndex {
    fn text(&self, doc_id: &str) -> Option<Cow<'_, str>> {
        self.unit(doc_id).map(|u| Cow::Borrowed(u.text.as_str()))
    }
}

impl DocumentStore for BTreeMap<String, String> {
    fn text(&self, doc_id: &str) -> Option<Cow<'_, str>> {
        self.get(doc_id).map(|t| Cow::Borrowed(t.as_str()))
    }
}

/// Result of a pointwise pass: the reranked list and, for every rescored
/// document, its highest-probability window (already truncated).
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseOutcome {
    pub list: RankedList,
    pub best_windows: BTreeMap<String, String>,
}

/// Orders `(index, score)` by descending score, ties by the prior position.
fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| math::desc(scores[a], scores[b]).then(a.cmp(&b)));
    order
}

/// Rebuilds a list from the reranked head plus the untouched tail.
fn assemble(candidates: &RankedList, head: Vec<(String, f64)>, tail: &[RankedEntry]) -> RankedList {
    let floor = head.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    let r = tail.len() as f64;
    let tail = tail
        .iter()
        .enumerate()
        .map(|(j, e)| (e.doc_id.clone(), floor - (j as f64 + 1.0) / (r + 1.0)));
    RankedList::from_sorted(
        candidates.topic_id(),
        candidates.tag(),
        head.into_iter().chain(tail),
    )
    .expect("reranked scores are ordered and ids come from a valid list")
}

/// Rescores the top `depth` candidates by their best window and reorders them.
pub fn pointwise_rerank<S, D>(
    scorer: &S,
    query: &str,
    candidates: &RankedList,
    docs: &D,
    depth: usize,
    max_tokens: usize,
) -> Result<PointwiseOutcome, ScorerError>
where
    S: Scorer + ?Sized,
    D: DocumentStore + ?Sized,
{
    let depth = depth.min(candidates.len());
    let (head, tail) = candidates.entries().split_at(depth);

    let mut windows: Vec<Vec<Cow<'_, str>>> = Vec::with_capacity(depth);
    for e in head {
        let mut w = docs.windows(&e.doc_id, max_tokens).unwrap_or_default();
        if w.is_empty() {
            w.push(Cow::Borrowed(""));
        }
        windows.push(w);
    }
    let batch: Vec<PointwiseRequest<'_>> = windows
        .iter()
        .flatten()
        .map(|passage| PointwiseRequest {
            query,
            passage: passage.as_ref(),
        })
        .collect();
    let probs = checked(scorer.pointwise(&batch)?, batch.len())?;

    let mut best_windows = BTreeMap::new();
    let mut doc_scores = Vec::with_capacity(depth);
    let mut offset = 0;
    for (e, w) in head.iter().zip(windows) {
        let span = &probs[offset..offset + w.len()];
        offset += w.len();
        // first window wins ties
        let (best, score) = span
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
            );
        doc_scores.push(score);
        best_windows.insert(
            e.doc_id.clone(),
            w.into_iter().nth(best).unwrap_or_default().into_owned(),
        );
    }

    let reranked = order_by_score(&doc_scores)
        .into_iter()
        .map(|i| (head[i].doc_id.clone(), doc_scores[i]))
        .collect();
    Ok(PointwiseOutcome {
        list: assemble(candidates, reranked, tail),
        best_windows,
    })
}

/// Pairwise preference probabilities over an ordered candidate set.
/// The diagonal is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    p: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            p: alloc::vec![0.0; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: f64) {
        debug_assert!(i != j, "diagonal entries are unused");
        self.p[i * self.n + j] = p;
    }

    /// Ordered pairs `(i, j)`, `i ≠ j`, in row-major order.
    pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    /// `s_i = Σ_{j≠i} (p[i][j] + (1 - p[j][i]))`.
    pub fn aggregate(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .filter(|&j| j != i)
                    .map(|j| self.get(i, j) + (1.0 - self.get(j, i)))
                    .sum()
            })
            .collect()
    }

    /// Candidate positions ordered by aggregate score, ties by position.
    pub fn ranking(&self) -> Vec<usize> {
        order_by_score(&self.aggregate())
    }
}

/// Reorders the top [`PAIRWISE_CANDIDATES`] by aggregated pairwise preference.
/// `passages` supplies each candidate's representative text, normally the
/// best windows of the pointwise pass.
pub fn pairwise_rerank<S, D>(
    scorer: &S,
    query: &str,
    candidates: &RankedList,
    passages: &D,
) -> Result<RankedList, ScorerError>
where
    S: Scorer + ?Sized,
    D: DocumentStore + ?Sized,
{
    let n = candidates.len().min(PAIRWISE_CANDIDATES);
    let (head, tail) = candidates.entries().split_at(n);
    let texts: Vec<Cow<'_, str>> = head
        .iter()
        .map(|e| passages.text(&e.doc_id).unwrap_or_default())
        .collect();
    let batch: Vec<PairwiseRequest<'_>> = ScoreMatrix::pairs(n)
        .map(|(i, j)| PairwiseRequest {
            query,
            passage_a: &texts[i],
            passage_b: &texts[j],
        })
        .collect();
    let probs = checked(scorer.pairwise(&batch)?, batch.len())?;

    let mut matrix = ScoreMatrix::new(n);
    for ((i, j), p) in ScoreMatrix::pairs(n).zip(probs) {
        matrix.set(i, j, p);
    }
    let s = matrix.aggregate();
    let reranked = order_by_score(&s)
        .into_iter()
        .map(|i| (head[i].doc_id.clone(), s[i]))
        .collect();
    Ok(assemble(candidates, reranked, tail))
}

const GRID: f64 = 1_048_576.0;
const GAIN: f64 = 8.0;
const BIAS: f64 = 4.0;

fn grid(p: f64) -> f64 {
    libm::round(p * GRID) / GRID
}

/// Deterministic lexical scorer; see the module docs for the formula.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceScorer {
    idf: BTreeMap<String, f64>,
    unseen_idf: f64,
}

impl ReferenceScorer {
    /// Scorer with idf = 1 for every term.
    pub fn uniform() -> Self {
        Self {
            idf: BTreeMap::new(),
            unseen_idf: 1.0,
        }
    }

    /// Scorer weighting terms by their idf in `idx`.
    pub fn from_index(idx: &InvertedIndex) -> Self {
        Self {
            idf: idx
                .terms()
                .map(|(t, _)| (t.to_string(), idx.idf(t)))
                .collect(),
            unseen_idf: idx.idf(""),
        }
    }

    fn idf(&self, term: &str) -> f64 {
        self.idf.get(term).copied().unwrap_or(self.unseen_idf)
    }

    /// Distinct query terms that count for coverage, with their idf.
    fn query_terms(&self, query: &str) -> Vec<(String, f64)> {
        let mut q = tokenize(query);
        q.sort();
        q.dedup();
        if q.iter().any(|t| !is_stopword(t)) {
            q.retain(|t| !is_stopword(t));
        }
        q.into_iter()
            .map(|t| {
                let idf = self.idf(&t);
                (t, idf)
            })
            .collect()
    }

    fn coverage_of(terms: &[(String, f64)], passage: &str) -> f64 {
        let total: f64 = terms.iter().map(|(_, w)| w).sum();
        if terms.is_empty() || total <= 0.0 {
            return 0.0;
        }
        let mut seen = alloc::vec![false; terms.len()];
        for_each_token(passage, |t| {
            if let Ok(i) = terms.binary_search_by(|(q, _)| q.as_str().cmp(t)) {
                seen[i] = true;
            }
        });
        let covered: f64 = terms
            .iter()
            .zip(&seen)
            .filter(|(_, &s)| s)
            .map(|((_, w), _)| w)
            .sum();
        covered / total
    }

    pub fn coverage(&self, query: &str, passage: &str) -> f64 {
        Self::coverage_of(&self.query_terms(query), passage)
    }

    fn probability(coverage: f64) -> f64 {
        grid(math::sigmoid(GAIN * coverage - BIAS))
    }

    pub fn score(&self, query: &str, passage: &str) -> f64 {
        Self::probability(self.coverage(query, passage))
    }

    pub fn preference(&self, query: &str, a: &str, b: &str) -> f64 {
        let x = self.score(query, a) - self.score(query, b);
        if x >= 0.0 {
            grid(math::sigmoid(x))
        } else {
            1.0 - grid(math::sigmoid(-x))
        }
    }
}

impl Scorer for ReferenceScorer {
    fn pointwise(&self, batch: &[PointwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
        let mut prepared: Option<(&str, Vec<(String, f64)>)> = None;
        Ok(batch
            .iter()
            .map(|r| {
                let terms = match &prepared {
                    Some((q, terms)) if *q == r.query => terms,
                    _ => &prepared.insert((r.query, self.query_terms(r.query))).1,
                };
                Self::probability(Self::coverage_of(terms, r.passage))
            })
            .collect())
    }

    fn pairwise(&self, batch: &[PairwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
        Ok(batch
            .iter()
            .map(|r| self.preference(r.query, r.passage_a, r.passage_b))
            .collect())
    }
}
