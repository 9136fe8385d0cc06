//! Interactive search: presets, facet filters, pagination and highlighting.
//!
//! A search ranks the whole candidate set first, then applies facet filters,
//! then cuts the requested page. Facet counts describe the top
//! [`FACET_DEPTH`] results before filtering.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::corpus::{sentence_spans, Article};
use crate::fusion::{max_aggregate, RankedList};
use crate::index::{for_each_token, tokenize, InvertedIndex};
use crate::rerank::{
    make_windows, pointwise_rerank, truncate_tokens, DocumentStore, Scorer, DEFAULT_MAX_TOKENS,
    DEFAULT_RERANK_DEPTH,
};
use crate::topics::is_stopword;
use crate::{math, Granularity};

pub const DEFAULT_PAGE_SIZE: usize = 10;
pub const MAX_PAGE_SIZE: usize = 50;
pub const FACET_DEPTH: usize = 500;
/// Units retrieved by the first stage.
pub const FIRST_STAGE_DEPTH: usize = 1000;
pub const DEFAULT_HIGHLIGHTS: usize = 3;
pub const UNKNOWN_FACET: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("article {0:?} not found")]
    NotFound(String),
    #[error("index unit {unit:?} refers to unknown article {article:?}")]
    Inconsistent { unit: String, article: String },
    #[error("{granularity} index supplied where {expected} was expected")]
    WrongGranularity {
        granularity: &'static str,
        expected: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// Paragraph BM25, max-aggregated to articles, pointwise reranked.
    #[default]
    Default,
    /// Abstract BM25, pointwise reranked.
    Abstract,
    /// Paragraph BM25, max-aggregated to articles, no reranking.
    Bm25,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Self::Default, Self::Abstract, Self::Bm25];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Default => "default",
            Self::Abstract => "abstract",
            Self::Bm25 => "bm25",
        }
    }
}

impl FromStr for Preset {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| EngineError::UnknownPreset(s.to_string()))
    }
}

/// One search request. Filters within a field are alternatives; filters on
/// different fields must all hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchRequest {
    pub query: String,
    pub year_from: Option<u32>,
    pub year_to: Option<u32>,
    pub journals: Vec<String>,
    pub sources: Vec<String>,
    pub authors: Vec<String>,
    pub page: usize,
    pub page_size: usize,
    pub preset: String,
}

impl Default for SearchRequest {
    fn default() -> Self {
        Self {
            query: String::new(),
            year_from: None,
            year_to: None,
            journals: Vec::new(),
            sources: Vec::new(),
            authors: Vec::new(),
            page: 1,
            page_size: DEFAULT_PAGE_SIZE,
            preset: Preset::Default.as_str().to_string(),
        }
    }
}

impl SearchRequest {
    pub fn new(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            ..Self::default()
        }
    }

    /// Checks the request and resolves its preset.
    pub fn validate(&self) -> Result<Preset, EngineError> {
        if tokenize(&self.query).is_empty() {
            return Err(EngineError::EmptyQuery);
        }
        let preset = self.preset.parse()?;
        if self.page == 0 {
            return Err(EngineError::BadRequest("page must be at least 1".into()));
        }
        if self.page_size == 0 || self.page_size > MAX_PAGE_SIZE {
            return Err(EngineError::BadRequest(alloc::format!(
                "page_size must be between 1 and {MAX_PAGE_SIZE}"
            )));
        }
        if let (Some(from), Some(to)) = (self.year_from, self.year_to) {
            if from > to {
                return Err(EngineError::BadRequest("year_from is after year_to".into()));
            }
        }
        Ok(preset)
    }

    fn has_year_filter(&self) -> bool {
        self.year_from.is_some() || self.year_to.is_some()
    }

    /// Whether `article` passes every facet filter.
    pub fn matches(&self, article: &Article) -> bool {
        if self.has_year_filter() {
            let Some(year) = article.year() else {
                return false;
            };
            if self.year_from.is_some_and(|f| year < f) || self.year_to.is_some_and(|t| year > t) {
                return false;
            }
        }
        let one_of = |wanted: &[String], value: Option<&String>| {
            wanted.is_empty() || value.is_some_and(|v| wanted.contains(v))
        };
        one_of(&self.journals, article.journal.as_ref())
            && one_of(&self.sources, article.source.as_ref())
            && (self.authors.is_empty() || article.authors.iter().any(|a| self.authors.contains(a)))
    }
}

/// A highlighted sentence. `paragraph` is `None` for the abstract; offsets
/// are byte offsets into that text.
#[derive(Debug, Clone, PartialEq)]
pub struct Highlight {
    pub paragraph: Option<usize>,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub article_id: String,
    pub title: String,
    pub abstract_text: String,
    pub url: Option<String>,
    pub journal: Option<String>,
    pub source: Option<String>,
    pub authors: Vec<String>,
    pub publish_time: Option<String>,
    pub score: f64,
    pub highlights: Vec<Highlight>,
}

/// Value counts per facet field.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FacetCounts {
    pub years: BTreeMap<String, usize>,
    pub authors: BTreeMap<String, usize>,
    pub journals: BTreeMap<String, usize>,
    pub sources: BTreeMap<String, usize>,
}

fn bump(map: &mut BTreeMap<String, usize>, value: Option<&str>) {
    let key = value
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .unwrap_or(UNKNOWN_FACET);
    *map.entry(key.to_string()).or_default() += 1;
}

/// Counts facet values over `articles`; missing values go to [`UNKNOWN_FACET`].
pub fn facet_counts<'a>(articles: impl IntoIterator<Item = &'a Article>) -> FacetCounts {
    let mut f = FacetCounts::default();
    for a in articles {
        bump(&mut f.years, a.year().map(|y| y.to_string()).as_deref());
        if a.authors.is_empty() {
            bump(&mut f.authors, None);
        }
        for author in &a.authors {
            bump(&mut f.authors, Some(author));
        }
        bump(&mut f.journals, a.journal.as_deref());
        bump(&mut f.sources, a.source.as_deref());
    }
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResponse {
    pub results: Vec<SearchResult>,
    pub facets: FacetCounts,
    /// Number of results after filtering, over all pages.
    pub total: usize,
    /// Set when the reranker failed and the first-stage order was served.
    pub degraded: bool,
    pub page: usize,
    pub page_size: usize,
    pub preset: Preset,
}

/// Query terms used for lexical matching: stopwords dropped unless nothing else is left.
fn match_terms(query: &str) -> Vec<String> {
    let mut terms = tokenize(query);
    terms.sort();
    terms.dedup();
    if terms.iter().any(|t| !is_stopword(t)) {
        terms.retain(|t| !is_stopword(t));
    }
    terms
}

/// Scores every sentence of the abstract and paragraphs by the summed idf of
/// the distinct query terms it contains and returns the best `m`, ties in
/// document order. Sentences without a query term are never returned.
pub fn highlight(query: &str, article: &Article, m: usize, idf: &InvertedIndex) -> Vec<Highlight> {
    let terms: Vec<(String, f64)> = match_terms(query)
        .into_iter()
        .map(|t| {
            let w = idf.idf(&t);
            (t, w)
        })
        .collect();
    let sections = core::iter::once((None, article.abstract_text.as_str())).chain(
        article
            .paragraphs
            .iter()
            .enumerate()
            .map(|(i, p)| (Some(i), p.as_str())),
    );
    let mut found = Vec::new();
    for (paragraph, text) in sections {
        for (sentence, span) in sentence_spans(text).into_iter().enumerate() {
            let mut seen = alloc::vec![false; terms.len()];
            for_each_token(&text[span.clone()], |t| {
                if let Ok(i) = terms.binary_search_by(|(q, _)| q.as_str().cmp(t)) {
                    seen[i] = true;
                }
            });
            let score: f64 = terms
                .iter()
                .zip(&seen)
                .filter(|(_, &s)| s)
                .map(|((_, w), _)| w)
                .sum();
            if score > 0.0 {
                found.push(Highlight {
                    paragraph,
                    sentence,
                    start: span.start,
                    end: span.end,
                    score,
                });
            }
        }
    }
    // stable sort keeps document order among equal scores
    found.sort_by(|a, b| math::desc(a.score, b.score));
    found.truncate(m);
    found
}

/// Full article text as the reranker sees it, with windows precomputed for
/// the default token budget.
struct ArticleTexts<'a>(&'a SearchEngine);

impl DocumentStore for ArticleTexts<'_> {
    fn text(&self, doc_id: &str) -> Option<Cow<'_, str>> {
        self.0
            .articles
            .get(doc_id)
            .map(|a| Cow::Owned(a.full_text()))
    }

    fn windows(&self, doc_id: &str, max_tokens: usize) -> Option<Vec<Cow<'_, str>>> {
        if max_tokens != DEFAULT_MAX_TOKENS {
            let text = self.text(doc_id)?;
            return Some(
                make_windows(&text)
                    .iter()
                    .map(|w| Cow::Owned(truncate_tokens(w, max_tokens).to_string()))
                    .collect(),
            );
        }
        self.0
            .windows
            .get(doc_id)
            .map(|ws| ws.iter().map(|w| Cow::Borrowed(w.as_str())).collect())
    }
}

/// Immutable search state: the articles, the two first-stage indexes and the
/// reranker windows of every article.
#[derive(Debug, Clone)]
pub struct SearchEngine {
    articles: BTreeMap<String, Article>,
    paragraph: InvertedIndex,
    abstracts: InvertedIndex,
    windows: BTreeMap<String, Vec<String>>,
}

impl SearchEngine {
    pub fn new(
        articles: impl IntoIterator<Item = Article>,
        paragraph: InvertedIndex,
        abstracts: InvertedIndex,
    ) -> Result<Self, EngineError> {
        for (idx, expected) in [
            (&paragraph, Granularity::Paragraph),
            (&abstracts, Granularity::Abstract),
        ] {
            if idx.granularity() != expected {
                return Err(EngineError::WrongGranularity {
                    granularity: idx.granularity().as_str(),
                    expected: expected.as_str(),
                });
            }
        }
        let articles: BTreeMap<String, Article> = articles
            .into_iter()
            .map(|a| (a.article_id.clone(), a))
            .collect();
        for unit in paragraph.units().iter().chain(abstracts.units()) {
            if !articles.contains_key(&unit.article_id) {
                return Err(EngineError::Inconsistent {
                    unit: unit.unit_id.clone(),
                    article: unit.article_id.clone(),
                });
            }
        }
        let windows = articles
            .iter()
            .map(|(id, a)| {
                let ws = make_windows(&a.full_text())
                    .iter()
                    .map(|w| truncate_tokens(w, DEFAULT_MAX_TOKENS).to_string())
                    .collect();
                (id.clone(), ws)
            })
            .collect();
        Ok(Self {
            articles,
            paragraph,
            abstracts,
            windows,
        })
    }

    pub fn article(&self, article_id: &str) -> Result<&Article, EngineError> {
        self.articles
            .get(article_id)
            .ok_or_else(|| EngineError::NotFound(article_id.to_string()))
    }

    pub fn articles(&self) -> impl Iterator<Item = &Article> {
        self.articles.values()
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn paragraph_index(&self) -> &InvertedIndex {
        &self.paragraph
    }

    pub fn abstract_index(&self) -> &InvertedIndex {
        &self.abstracts
    }

    /// Article-level BM25 ranking for a preset, before reranking.
    pub fn first_stage(&self, query: &str, preset: Preset) -> RankedList {
        let terms = match_terms(query);
        match preset {
            Preset::Default | Preset::Bm25 => {
                let hits = self.paragraph.search_tokens(&terms, FIRST_STAGE_DEPTH);
                max_aggregate(&RankedList::from_hits(0, preset.as_str(), &hits))
                    .expect("paragraph index unit ids are well formed")
            }
            Preset::Abstract => {
                let hits = self.abstracts.search_tokens(&terms, FIRST_STAGE_DEPTH);
                RankedList::from_hits(0, preset.as_str(), &hits)
            }
        }
    }

    /// Full unfiltered ranking plus the degraded flag.
    pub fn rank<S: Scorer + ?Sized>(
        &self,
        query: &str,
        preset: Preset,
        scorer: &S,
    ) -> (RankedList, bool) {
        let first = self.first_stage(query, preset);
        if preset == Preset::Bm25 {
            return (first, false);
        }
        let docs = ArticleTexts(self);
        match pointwise_rerank(
            scorer,
            query,
            &first,
            &docs,
            DEFAULT_RERANK_DEPTH,
            DEFAULT_MAX_TOKENS,
        ) {
            Ok(outcome) => (outcome.list, false),
            Err(_) => (first, true),
        }
    }

    pub fn search<S: Scorer + ?Sized>(
        &self,
        req: &SearchRequest,
        scorer: &S,
    ) -> Result<SearchResponse, EngineError> {
        let preset = req.validate()?;
        let (ranking, degraded) = self.rank(&req.query, preset, scorer);
        let ranked: Vec<(&Article, f64)> = ranking
            .entries()
            .iter()
            .filter_map(|e| self.articles.get(&e.doc_id).map(|a| (a, e.score)))
            .collect();
        let facets = facet_counts(ranked.iter().take(FACET_DEPTH).map(|(a, _)| *a));
        let filtered: Vec<(&Article, f64)> =
            ranked.into_iter().filter(|(a, _)| req.matches(a)).collect();
        let total = filtered.len();
        let results = filtered
            .into_iter()
            .skip((req.page - 1).saturating_mul(req.page_size))
            .take(req.page_size)
            .map(|(a, score)| SearchResult {
                article_id: a.article_id.clone(),
                title: a.title.clone(),
                abstract_text: a.abstract_text.clone(),
                url: a.url.clone(),
                journal: a.journal.clone(),
                source: a.source.clone(),
                authors: a.authors.clone(),
                publish_time: a.publish_time.clone(),
                score,
                highlights: highlight(&req.query, a, DEFAULT_HIGHLIGHTS, &self.abstracts),
            })
            .collect();
        Ok(SearchResponse {
            results,
            facets,
            total,
            degraded,
            page: req.page,
            page_size: req.page_size,
            preset,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_units;
    use crate::rerank::{PairwiseRequest, PointwiseRequest, ReferenceScorer, ScorerError};
    use alloc::vec;

    fn article(
        id: &str,
        year: &str,
        journal: Option<&str>,
        authors: &[&str],
        abs: &str,
        paras: &[&str],
    ) -> Article {
        Article {
            article_id: id.into(),
            title: alloc::format!("Title {id}"),
            abstract_text: abs.into(),
            paragraphs: paras.iter().map(|p| p.to_string()).collect(),
            authors: authors.iter().map(|a| a.to_string()).collect(),
            journal: journal.map(Into::into),
            source: Some("PMC".into()),
            publish_time: (!year.is_empty()).then(|| alloc::format!("{year}-03-01")),
            url: None,
        }
    }

    fn corpus() -> Vec<Article> {
        vec![
            article(
                "a1",
                "2020",
                Some("Lancet"),
                &["Li", "Kim"],
                "Serology detects antibodies. Other words.",
                &[],
            ),
            article(
                "a2",
                "2020",
                None,
                &["Kim"],
                "Masks reduce spread.",
                &["Antibodies wane slowly."],
            ),
            article(
                "a3",
                "2003",
                Some("Nature"),
                &[],
                "SARS outbreak masks.",
                &["Masks again."],
            ),
            article("a4", "", Some("Nature"), &["Ng"], "Remdesivir trial.", &[]),
        ]
    }

    fn engine() -> SearchEngine {
        let arts = corpus();
        let units = |g| {
            arts.iter()
                .flat_map(|a| generate_units(a, g))
                .collect::<Vec<_>>()
        };
        let para =
            InvertedIndex::build(Granularity::Paragraph, &units(Granularity::Paragraph)).unwrap();
        let abs =
            InvertedIndex::build(Granularity::Abstract, &units(Granularity::Abstract)).unwrap();
        SearchEngine::new(arts, para, abs).unwrap()
    }

    struct Down;

    impl Scorer for Down {
        fn pointwise(&self, _: &[PointwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
            Err(ScorerError::Unavailable("down".into()))
        }
        fn pairwise(&self, _: &[PairwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
            Err(ScorerError::Unavailable("down".into()))
        }
    }

    #[test]
    fn request_validation() {
        let e = engine();
        let s = ReferenceScorer::uniform();
        assert_eq!(
            e.search(&SearchRequest::new("  "), &s),
            Err(EngineError::EmptyQuery)
        );
        let mut r = SearchRequest::new("masks");
        r.preset = "neural".into();
        assert_eq!(
            e.search(&r, &s),
            Err(EngineError::UnknownPreset("neural".into()))
        );
        for (page, size) in [(0, 10), (1, 0), (1, 51)] {
            let r = SearchRequest {
                page,
                page_size: size,
                ..SearchRequest::new("masks")
            };
            assert!(matches!(e.search(&r, &s), Err(EngineError::BadRequest(_))));
        }
        assert_eq!(
            e.article("zz").unwrap_err(),
            EngineError::NotFound("zz".into())
        );
    }

    #[test]
    fn filters_and_pagination() {
        let e = engine();
        let s = ReferenceScorer::from_index(e.abstract_index());
        let mut r = SearchRequest::new("masks antibodies");
        let all = e.search(&r, &s).unwrap();
        assert_eq!(all.total, 3);
        assert!(!all.degraded);
        r.year_from = Some(2020);
        r.year_to = Some(2020);
        let y = e.search(&r, &s).unwrap();
        assert!(y
            .results
            .iter()
            .all(|x| x.publish_time.as_deref().unwrap().starts_with("2020")));
        assert_eq!(y.total, 2);
        // facets ignore filters
        assert_eq!(y.facets, all.facets);
        r.page = 3;
        let beyond = e.search(&r, &s).unwrap();
        assert!(beyond.results.is_empty());
        assert_eq!(beyond.total, 2);

        let mut r = SearchRequest::new("masks antibodies");
        r.page_size = 1;
        let pages: Vec<String> = (1..=3)
            .flat_map(|page| {
                let r = SearchRequest { page, ..r.clone() };
                e.search(&r, &s)
                    .unwrap()
                    .results
                    .into_iter()
                    .map(|x| x.article_id)
            })
            .collect();
        let whole: Vec<String> = all.results.into_iter().map(|x| x.article_id).collect();
        assert_eq!(pages, whole);
        r.journals = vec!["Nature".into(), "Lancet".into()];
        r.authors = vec!["Li".into()];
        r.page_size = 10;
        let j = e.search(&r, &s).unwrap();
        assert_eq!(
            j.results
                .iter()
                .map(|x| x.article_id.as_str())
                .collect::<Vec<_>>(),
            ["a1"]
        );
    }

    #[test]
    fn outage_serves_first_stage() {
        let e = engine();
        let r = SearchRequest::new("masks antibodies");
        let resp = e.search(&r, &Down).unwrap();
        assert!(resp.degraded);
        let first = e.first_stage("masks antibodies", Preset::Default);
        assert_eq!(
            resp.results
                .iter()
                .map(|x| x.article_id.as_str())
                .collect::<Vec<_>>(),
            first.doc_ids().collect::<Vec<_>>()
        );
        let bm25 = SearchRequest {
            preset: "bm25".into(),
            ..r
        };
        assert!(!e.search(&bm25, &Down).unwrap().degraded);
    }

    #[test]
    fn facet_buckets() {
        let f = facet_counts(&corpus());
        assert_eq!(f.years["2020"], 2);
        assert_eq!(f.years["2003"], 1);
        assert_eq!(f.years[UNKNOWN_FACET], 1);
        assert_eq!(f.journals[UNKNOWN_FACET], 1);
        assert_eq!(f.journals["Nature"], 2);
        assert_eq!(f.authors["Kim"], 2);
        assert_eq!(f.authors["Li"], 1);
        assert_eq!(f.authors[UNKNOWN_FACET], 1);
        assert_eq!(f.sources["PMC"], 4);
    }

    #[test]
    fn highlight_rules() {
        let e = engine();
        let a = &corpus()[0];
        let h = highlight("antibodies", a, 3, e.abstract_index());
        assert_eq!(h.len(), 1);
        assert_eq!((h[0].paragraph, h[0].sentence), (None, 0));
        assert_eq!(
            &a.abstract_text[h[0].start..h[0].end],
            "Serology detects antibodies."
        );
        assert!(highlight("remdesivir", a, 3, e.abstract_index()).is_empty());

        let a = &corpus()[2];
        let h = highlight("masks", a, 1, e.abstract_index());
        assert_eq!((h[0].paragraph, h[0].sentence), (None, 0));
        let h = highlight("masks", a, 3, e.abstract_index());
        assert_eq!(h.len(), 2);
        assert_eq!(h[1].paragraph, Some(0));
        assert_eq!(&a.paragraphs[0][h[1].start..h[1].end], "Masks again.");
    }

    #[test]
    fn inconsistent_engine_rejected() {
        let arts = corpus();
        let units: Vec<_> = arts
            .iter()
            .flat_map(|a| generate_units(a, Granularity::Paragraph))
            .collect();
        let para = InvertedIndex::build(Granularity::Paragraph, &units).unwrap();
        let abs_units: Vec<_> = arts
            .iter()
            .flat_map(|a| generate_units(a, Granularity::Abstract))
            .collect();
        let abs = InvertedIndex::build(Granularity::Abstract, &abs_units).unwrap();
        assert!(matches!(
            SearchEngine::new(arts[1..].to_vec(), para.clone(), abs.clone()),
            Err(EngineError::Inconsistent { .. })
        ));
        assert!(matches!(
            SearchEngine::new(arts, abs, para),
            Err(EngineError::WrongGranularity { .. })
        ));
    }
}
