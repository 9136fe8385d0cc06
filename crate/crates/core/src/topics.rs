//! Topics and keyword query generation.
//!
//! A query representation is the non-stopword terms of the topic's query
//! field, optionally expanded with rare terms taken from its question field.
//! The expansion keeps question terms whose idf over the target index is at
//! least a threshold θ; θ = +∞ disables it and leaves the query field alone.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::index::{tokenize, InvertedIndex};

/// The shipped stopword list (40 words).
pub const STOPWORDS: [&str; 40] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "do", //
    "does", "for", "from", "has", "have", "how", "in", "is", "it", "its", //
    "of", "on", "or", "that", "the", "their", "there", "these", "this", "to", //
    "was", "were", "what", "when", "where", "which", "who", "why", "will", "with",
];

/// Default expansion threshold: terms occurring in fewer than ~10% of units.
pub const DEFAULT_THETA: f64 = core::f64::consts::LN_10;

pub fn is_stopword(term: &str) -> bool {
    STOPWORDS.contains(&term)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topic {
    pub topic_id: u32,
    pub query: String,
    pub question: String,
    pub narrative: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopicError {
    #[error("duplicate topic id {0}")]
    DuplicateId(u32),
    #[error("topic {0} has an empty query field")]
    MissingQuery(u32),
    #[error("topic id must be positive")]
    ZeroId,
}

/// Checks a topic set: positive unique ids and non-empty query fields.
pub fn validate_topics(topics: &[Topic]) -> Result<(), TopicError> {
    let mut seen = BTreeSet::new();
    for t in topics {
        if t.topic_id == 0 {
            return Err(TopicError::ZeroId);
        }
        if !seen.insert(t.topic_id) {
            return Err(TopicError::DuplicateId(t.topic_id));
        }
        if t.query.trim().is_empty() {
            return Err(TopicError::MissingQuery(t.topic_id));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    QueryField,
    QuestionExpansion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTerm {
    pub term: String,
    pub provenance: Provenance,
}

/// Keyword query for one topic: no stopwords, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRepresentation {
    pub topic_id: u32,
    pub terms: Vec<QueryTerm>,
}

impl QueryRepresentation {
    pub fn tokens(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.term.as_str()).collect()
    }

    /// Terms joined by spaces; re-tokenizes to the same terms.
    pub fn text(&self) -> String {
        self.tokens().join(" ")
    }
}

/// Order-preserving removal of stopwords.
pub fn strip_stopwords<S: AsRef<str>>(terms: &[S]) -> Vec<String> {
    terms
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !is_stopword(t))
        .map(ToString::to_string)
        .collect()
}

fn dedup(terms: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    terms
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Non-stopword question tokens whose idf in `idf_source` is at least `theta`,
/// deduplicated in order of first occurrence.
pub fn extract_key_terms(question: &str, idf_source: &InvertedIndex, theta: f64) -> Vec<String> {
    let terms = strip_stopwords(&tokenize(question));
    dedup(
        terms
            .into_iter()
            .filter(|t| idf_source.idf(t) >= theta)
            .collect(),
    )
}

/// Builds the query representation from the topic's query field plus the
/// given expansion terms. Expansion strings are tokenized, stopword-stripped
/// and dropped when already present.
pub fn query_with_expansion<I, S>(topic: &Topic, expansion: I) -> QueryRepresentation
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let base = dedup(strip_stopwords(&tokenize(&topic.query)));
    let mut seen: BTreeSet<String> = base.iter().cloned().collect();
    let mut terms: Vec<QueryTerm> = base
        .into_iter()
        .map(|term| QueryTerm {
            term,
            provenance: Provenance::QueryField,
        })
        .collect();
    for phrase in expansion {
        for term in strip_stopwords(&tokenize(phrase.as_ref())) {
            if seen.insert(term.clone()) {
                terms.push(QueryTerm {
                    term,
                    provenance: Provenance::QuestionExpansion,
                });
            }
        }
    }
    QueryRepresentation {
        topic_id: topic.topic_id,
        terms,
    }
}

/// Query field terms expanded with [`extract_key_terms`] of the question.
pub fn generate_query(topic: &Topic, idx: &InvertedIndex, theta: f64) -> QueryRepresentation {
    query_with_expansion(topic, extract_key_terms(&topic.question, idx, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Granularity, RetrievalUnit};
    use alloc::format;
    use alloc::vec;

    fn topic(query: &str, question: &str) -> Topic {
        Topic {
            topic_id: 1,
            query: query.into(),
            question: question.into(),
            narrative: String::new(),
        }
    }

    /// 10 units; "tests" appears in 3 of them, "antibodies" in 1 and "covid" in 1.
    fn fixture_index() -> InvertedIndex {
        let mut texts = vec![
            "serological tests detect antibodies",
            "rapid tests for covid 19 origin",
            "tests of ventilation",
        ];
        let filler: Vec<String> = (0..7)
            .map(|i| format!("coronavirus origin filler{i}"))
            .collect();
        texts.extend(filler.iter().map(String::as_str));
        let units: Vec<RetrievalUnit> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| RetrievalUnit {
                unit_id: format!("d{i:02}"),
                article_id: format!("d{i:02}"),
                granularity: Granularity::Abstract,
                text: t.to_string(),
                paragraph_index: None,
            })
            .collect();
        InvertedIndex::build(Granularity::Abstract, &units).unwrap()
    }

    #[test]
    fn stopword_list_size_and_stripping() {
        assert_eq!(STOPWORDS.len(), 40);
        assert_eq!(
            strip_stopwords(&["what", "is", "the", "origin"]),
            ["origin"]
        );
        assert!(strip_stopwords::<&str>(&[]).is_empty());
        assert_eq!(strip_stopwords(&["covid"]), ["covid"]);
    }

    #[test]
    fn key_terms_follow_idf_threshold() {
        let idx = fixture_index();
        // N=10: idf(tests; df=3) = ln(1 + 7.5/3.5) ≈ 1.145, idf(antibodies; df=1) = ln(1 + 9.5/1.5) ≈ 1.992
        let tests_idf = idx.idf("tests");
        let antibodies_idf = idx.idf("antibodies");
        assert!((tests_idf - libm::log(1.0 + 7.5 / 3.5)).abs() < 1e-12);
        assert!(tests_idf < 1.5 && antibodies_idf > 1.9);
        assert_eq!(
            extract_key_terms("are tests of antibodies", &idx, 1.5),
            ["antibodies"]
        );
        assert_eq!(
            extract_key_terms("what tests detect antibodies tests", &idx, 0.0),
            ["tests", "detect", "antibodies"]
        );
        // never indexed: df = 0 gives the largest idf
        assert_eq!(extract_key_terms("zymogen", &idx, 2.0), ["zymogen"]);
    }

    #[test]
    fn generate_query_expands_with_question_terms() {
        let idx = fixture_index();
        let q = generate_query(
            &topic("coronavirus origin", "what is the origin of COVID-19"),
            &idx,
            DEFAULT_THETA,
        );
        // origin: df=8 -> idf small, deduplicated anyway; covid, 19: df=1 -> idf ≈ 1.99 < ln 10
        assert_eq!(q.tokens(), ["coronavirus", "origin"]);

        let q = generate_query(
            &topic("coronavirus origin", "what is the origin of COVID-19"),
            &idx,
            1.5,
        );
        assert_eq!(q.tokens(), ["coronavirus", "origin", "covid", "19"]);
        assert_eq!(q.terms[1].provenance, Provenance::QueryField);
        assert_eq!(q.terms[2].provenance, Provenance::QuestionExpansion);
    }

    #[test]
    fn empty_question_and_infinite_theta() {
        let idx = fixture_index();
        let t = topic("the coronavirus origin", "");
        let q = generate_query(&t, &idx, 0.0);
        assert_eq!(q.tokens(), ["coronavirus", "origin"]);
        let t = topic("coronavirus", "antibodies tests");
        assert_eq!(
            generate_query(&t, &idx, f64::INFINITY).tokens(),
            ["coronavirus"]
        );
    }

    #[test]
    fn duplicate_expansion_keeps_query_field_tag() {
        let idx = fixture_index();
        let q = generate_query(&topic("antibodies antibodies", "antibodies"), &idx, 0.0);
        assert_eq!(q.terms.len(), 1);
        assert_eq!(q.terms[0].provenance, Provenance::QueryField);
    }

    #[test]
    fn topic_validation() {
        let mut a = topic("x", "");
        let b = topic("y", "");
        assert_eq!(
            validate_topics(&[a.clone(), b.clone()]),
            Err(TopicError::DuplicateId(1))
        );
        a.topic_id = 2;
        assert!(validate_topics(&[a.clone(), b]).is_ok());
        a.query = "  ".into();
        assert_eq!(validate_topics(&[a]), Err(TopicError::MissingQuery(2)));
    }
}
