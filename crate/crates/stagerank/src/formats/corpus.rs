//! Corpus files: one JSON object per line with the fields `id`, `title`,
//! `abstract`, `paragraphs`, `authors`, `journal`, `source`, `publish_time`
//! and `url`. Unknown fields are ignored.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stagerank_core::Article;

use super::read_text;
use crate::error::{Error, Result};

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default)]
struct Record {
    id: Option<String>,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: String,
    paragraphs: Vec<String>,
    authors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    journal: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    publish_time: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    url: Option<String>,
}

/// Parses and validates one corpus line. Errors carry no location; see
/// [`parse_corpus`] for that.
pub fn parse_article(line: &str) -> Result<Article, String> {
    let r: Record = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    let nonempty = |v: Option<String>| v.filter(|s| !s.trim().is_empty());
    let article = Article {
        article_id: r.id.unwrap_or_default(),
        title: r.title.unwrap_or_default(),
        abstract_text: r.abstract_text,
        paragraphs: r.paragraphs,
        authors: r.authors,
        journal: nonempty(r.journal),
        source: nonempty(r.source),
        publish_time: nonempty(r.publish_time),
        url: nonempty(r.url),
    };
    article.validate().map_err(|e| e.to_string())?;
    Ok(article)
}

pub fn write_article(article: &Article) -> String {
    let r = Record {
        id: Some(article.article_id.clone()),
        title: Some(article.title.clone()),
        abstract_text: article.abstract_text.clone(),
        paragraphs: article.paragraphs.clone(),
        authors: article.authors.clone(),
        journal: article.journal.clone(),
        source: article.source.clone(),
        publish_time: article.publish_time.clone(),
        url: article.url.clone(),
    };
    serde_json::to_string(&r).expect("records serialize")
}

/// Parses a whole corpus; blank lines are skipped and ids must be unique.
pub fn parse_corpus(text: &str, path: &Path) -> Result<Vec<Article>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a = parse_article(line).map_err(|m| Error::parse(path, i + 1, m))?;
        if !seen.insert(a.article_id.clone()) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("duplicate article id {:?}", a.article_id),
            ));
        }
        out.push(a);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Article>> {
    parse_corpus(&read_text(path)?, path)
}
