//! Articles and the retrieval units indexed for them.

mod sentences;

pub use sentences::{sentence_spans, split_sentences, ABBREVIATIONS};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

/// One scientific article.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Article {
    pub article_id: String,
    pub title: String,
    pub abstract_text: String,
    /// Body paragraphs; empty when no full text is available.
    pub paragraphs: Vec<String>,
    pub authors: Vec<String>,
    pub journal: Option<String>,
    pub source: Option<String>,
    /// `YYYY-MM-DD` or `YYYY`.
    pub publish_time: Option<String>,
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArticleError {
    #[error("article is missing an id")]
    MissingId,
    #[error("article {0:?} is missing a title")]
    MissingTitle(String),
    #[error("article id {0:?} must not contain whitespace or '.'")]
    InvalidId(String),
}

impl Article {
    /// Checks the ingest invariants: a non-empty id usable inside unit ids,
    /// and a non-empty title.
    pub fn validate(&self) -> Result<(), ArticleError> {
        if self.article_id.is_empty() {
            return Err(ArticleError::MissingId);
        }
        if self
            .article_id
            .chars()
            .any(|c| c.is_whitespace() || c == '.')
        {
            return Err(ArticleError::InvalidId(self.article_id.clone()));
        }
        if self.title.trim().is_empty() {
            return Err(ArticleError::MissingTitle(self.article_id.clone()));
        }
        Ok(())
    }

    /// Publication year, taken from the `publish_time` prefix.
    pub fn year(&self) -> Option<u32> {
        let t = self.publish_time.as_deref()?;
        let y = t.get(..4)?;
        if y.bytes().all(|b| b.is_ascii_digit()) {
            y.parse().ok()
        } else {
            None
        }
    }

    /// Title and abstract joined by a space (title alone when the abstract is empty).
    pub fn title_abstract(&self) -> String {
        join_nonempty([self.title.as_str(), self.abstract_text.as_str()])
    }

    /// Title, abstract and every paragraph joined by single spaces.
    pub fn full_text(&self) -> String {
        join_nonempty(
            [self.title.as_str(), self.abstract_text.as_str()]
                .into_iter()
                .chain(self.paragraphs.iter().map(String::as_str)),
        )
    }
}

fn join_nonempty<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for p in parts.into_iter().map(str::trim).filter(|p| !p.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(p);
    }
    out
}

/// What counts as one indexed document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Granularity {
    /// Title and abstract only.
    Abstract,
    /// Whole article as one document.
    FullText,
    /// One document per body paragraph plus one for title and abstract.
    Paragraph,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Self::Abstract, Self::FullText, Self::Paragraph];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Abstract => "abstract",
            Self::FullText => "fulltext",
            Self::Paragraph => "paragraph",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown granularity {0:?} (expected abstract, fulltext or paragraph)")]
pub struct UnknownGranularity(pub String);

impl FromStr for Granularity {
    type Err = UnknownGranularity;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abstract" => Ok(Self::Abstract),
            "fulltext" => Ok(Self::FullText),
            "paragraph" => Ok(Self::Paragraph),
            other => Err(UnknownGranularity(other.to_string())),
        }
    }
}

/// An indexable document derived from an [`Article`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalUnit {
    pub unit_id: String,
    pub article_id: String,
    pub granularity: Granularity,
    pub text: String,
    pub paragraph_index: Option<usize>,
}

/// Unit id of body paragraph `index` of `article_id`.
pub fn paragraph_unit_id(article_id: &str, index: usize) -> String {
    format!("{article_id}.{index}")
}

/// Derives the retrieval units of `article` under `granularity`.
///
/// Paragraph granularity yields `n + 1` units for `n` paragraphs: the
/// title+abstract unit (id = article id) followed by one title+abstract+paragraph
/// unit per paragraph.
pub fn generate_units(article: &Article, granularity: Granularity) -> Vec<RetrievalUnit> {
    let unit = |unit_id: String, text: String, paragraph_index| RetrievalUnit {
        unit_id,
        article_id: article.article_id.clone(),
        granularity,
        text,
        paragraph_index,
    };
    match granularity {
        Granularity::Abstract => vec![unit(
            article.article_id.clone(),
            article.title_abstract(),
            None,
        )],
        Granularity::FullText => vec![unit(article.article_id.clone(), article.full_text(), None)],
        Granularity::Paragraph => {
            let head = article.title_abstract();
            let mut units = Vec::with_capacity(article.paragraphs.len() + 1);
            units.push(unit(article.article_id.clone(), head.clone(), None));
            for (i, p) in article.paragraphs.iter().enumerate() {
                units.push(unit(
                    paragraph_unit_id(&article.article_id, i),
                    join_nonempty([head.as_str(), p.as_str()]),
                    Some(i),
                ));
            }
            units
        }
    }
}

/// Splits a unit id into its article id and optional paragraph index.
///
/// Returns `None` for ids that are neither a bare article id nor
/// `article.paragraph`.
pub fn parse_unit_id(unit_id: &str) -> Option<(&str, Option<usize>)> {
    match unit_id.rsplit_once('.') {
        None if !unit_id.is_empty() => Some((unit_id, None)),
        None => None,
        Some((article, para)) => {
            if article.is_empty()
                || article.contains('.')
                || para.is_empty()
                || !para.bytes().all(|b| b.is_ascii_digit())
            {
                return None;
            }
            para.parse().ok().map(|p| (article, Some(p)))
        }
    }
}
