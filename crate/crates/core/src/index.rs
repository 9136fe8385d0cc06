//! Tokenization, inverted index construction and BM25 retrieval.
//!
//! A unit scores `Σ_t idf(t) · tf · (k1 + 1) / (tf + k1 · (1 - b + b · dl / avg_dl))`
//! over the query terms it contains, with `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`.
//! Scores are rounded to multiples of [`SCORE_GRID`] (2⁻³²).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{Granularity, RetrievalUnit};
use crate::math;

/// Lowercases `text` and splits it on every non-alphanumeric character.
/// No stemming and no stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for_each_token(text, |t| tokens.push(t.to_string()));
    tokens
}

/// Calls `f` on every token [`tokenize`] would produce, without allocating
/// per token.
pub fn for_each_token(text: &str, mut f: impl FnMut(&str)) {
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            if c.is_ascii() {
                current.push(c.to_ascii_lowercase());
            } else {
                current.extend(c.to_lowercase().filter(|l| l.is_alphanumeric()));
            }
        } else if !current.is_empty() {
            f(&current);
            current.clear();
        }
    }
    if !current.is_empty() {
        f(&current);
    }
}

/// BM25 saturation and length normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate unit id {0:?}")]
    DuplicateUnit(String),
    #[error("unknown unit id {0:?}")]
    UnknownUnit(String),
    #[error("inconsistent index data: {0}")]
    Inconsistent(String),
}

/// Stored metadata of one indexed unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitRecord {
    pub unit_id: String,
    pub article_id: String,
    pub paragraph_index: Option<usize>,
    pub text: String,
    /// Length in tokens.
    pub length: u32,
}

/// `unit` is the position of the unit in [`InvertedIndex::units`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub unit: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub unit: &'a UnitRecord,
    pub score: f64,
}

/// An immutable in-memory inverted index over retrieval units.
///
/// Units are kept sorted by unit id, so posting lists ordered by unit
/// position are also ordered by unit id.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    granularity: Granularity,
    units: Vec<UnitRecord>,
    postings: BTreeMap<String, Vec<Posting>>,
    avg_dl: f64,
    params: Bm25Params,
}

impl InvertedIndex {
    /// Builds an index over `units`, all assumed to share `granularity`.
    pub fn build(granularity: Granularity, units: &[RetrievalUnit]) -> Result<Self, IndexError> {
        let mut order: Vec<&RetrievalUnit> = units.iter().collect();
        order.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
        if let Some(w) = order.windows(2).find(|w| w[0].unit_id == w[1].unit_id) {
            return Err(IndexError::DuplicateUnit(w[0].unit_id.clone()));
        }

        let mut records = Vec::with_capacity(order.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (pos, unit) in order.into_iter().enumerate() {
            let tokens = tokenize(&unit.text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    unit: pos as u32,
                    tf: count,
                });
            }
            records.push(UnitRecord {
                unit_id: unit.unit_id.clone(),
                article_id: unit.article_id.clone(),
                paragraph_index: unit.paragraph_index,
                text: unit.text.clone(),
                length: tokens.len() as u32,
            });
        }
        Ok(Self::assemble(granularity, records, postings))
    }

    /// Reassembles an index from stored parts, checking every invariant.
    pub fn from_parts(
        granularity: Granularity,
        units: Vec<UnitRecord>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Result<Self, IndexError> {
        if let Some(w) = units.windows(2).find(|w| w[0].unit_id >= w[1].unit_id) {
            return Err(if w[0].unit_id == w[1].unit_id {
                IndexError::DuplicateUnit(w[0].unit_id.clone())
            } else {
                IndexError::Inconsistent("units not sorted by id".to_string())
            });
        }
        let mut lengths = vec![0u64; units.len()];
        for (term, list) in &postings {
            if term.is_empty() || list.is_empty() {
                return Err(IndexError::Inconsistent(
                    "empty term or posting list".to_string(),
                ));
            }
            if list.windows(2).any(|w| w[0].unit >= w[1].unit) {
                return Err(IndexError::Inconsistent(alloc::format!(
                    "postings of {term:?} not sorted"
                )));
            }
            for p in list {
                let slot = lengths.get_mut(p.unit as usize).ok_or_else(|| {
                    IndexError::Inconsistent(alloc::format!("posting of {term:?} out of range"))
                })?;
                if p.tf == 0 {
                    return Err(IndexError::Inconsistent(alloc::format!(
                        "zero tf for {term:?}"
                    )));
                }
                *slot += u64::from(p.tf);
            }
        }
        if let Some((u, _)) = units
            .iter()
            .zip(&lengths)
            .find(|(u, &len)| u64::from(u.length) != len)
        {
            return Err(IndexError::Inconsistent(alloc::format!(
                "length of {:?} disagrees with postings",
                u.unit_id
            )));
        }
        Ok(Self::assemble(granularity, units, postings))
    }

    fn assemble(
        granularity: Granularity,
        units: Vec<UnitRecord>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Self {
        let total: u64 = units.iter().map(|u| u64::from(u.length)).sum();
        let avg_dl = if units.is_empty() {
            0.0
        } else {
            total as f64 / units.len() as f64
        };
        Self {
            granularity,
            units,
            postings,
            avg_dl,
            params: Bm25Params::default(),
        }
    }

    pub fn with_params(mut self, params: Bm25Params) -> Self {
        self.params = params;
        self
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Number of units.
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn avg_dl(&self) -> f64 {
        self.avg_dl
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn unit(&self, unit_id: &str) -> Option<&UnitRecord> {
        self.position(unit_id).map(|p| &self.units[p])
    }

    fn position(&self, unit_id: &str) -> Option<usize> {
        self.units
            .binary_search_by(|u| u.unit_id.as_str().cmp(unit_id))
            .ok()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    /// All terms with their posting lists, in term order.
    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings
            .iter()
            .map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`; positive for every df, largest
    /// for terms that never occur.
    pub fn idf(&self, term: &str) -> f64 {
        idf(self.len(), self.df(term))
    }

    fn term_weight(&self, idf: f64, tf: u32, length: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = if self.avg_dl > 0.0 {
            1.0 - b + b * f64::from(length) / self.avg_dl
        } else {
            1.0
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one unit. Repeated query terms count once per occurrence.
    pub fn bm25_score<S: AsRef<str>>(&self, query: &[S], unit_id: &str) -> Result<f64, IndexError> {
        let pos = self
            .position(unit_id)
            .ok_or_else(|| IndexError::UnknownUnit(unit_id.to_string()))?;
        let length = self.units[pos].length;
        let mut parts = Vec::new();
        for term in query {
            let term = term.as_ref();
            let list = self.postings(term);
            if let Ok(i) = list.binary_search_by(|p| p.unit.cmp(&(pos as u32))) {
                parts.push(self.term_weight(idf(self.len(), list.len()), list[i].tf, length));
            }
        }
        Ok(sum_ascending(&mut parts))
    }

    /// Top-`k` units for a query text.
    pub fn search(&self, query: &str, k: usize) -> Vec<Hit<'_>> {
        self.search_tokens(&tokenize(query), k)
    }

    /// Top-`k` units by BM25 over already tokenized query terms, highest score
    /// first, ties by ascending unit id. Units scoring zero are left out.
    pub fn search_tokens<S: AsRef<str>>(&self, query: &[S], k: usize) -> Vec<Hit<'_>> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut slot = vec![u32::MAX; self.units.len()];
        let mut parts: Vec<(usize, Vec<f64>)> = Vec::new();
        for term in query {
            let list = self.postings(term.as_ref());
            if list.is_empty() {
                continue;
            }
            let idf = idf(self.len(), list.len());
            for p in list {
                let u = p.unit as usize;
                if slot[u] == u32::MAX {
                    slot[u] = parts.len() as u32;
                    parts.push((u, Vec::new()));
                }
                parts[slot[u] as usize]
                    .1
                    .push(self.term_weight(idf, p.tf, self.units[u].length));
            }
        }
        let mut hits: Vec<(usize, f64)> = parts
            .into_iter()
            .map(|(u, mut w)| (u, sum_ascending(&mut w)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| math::desc(a.1, b.1).then(a.0.cmp(&b.0));
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, by_rank);
            hits.truncate(k);
        }
        hits.sort_by(by_rank);
        hits.into_iter()
            .map(|(u, score)| Hit {
                unit: &self.units[u],
                score,
            })
            .collect()
    }
}

/// Spacing of the grid BM25 scores are rounded to.
pub const SCORE_GRID: f64 = 1.0 / 4_294_967_296.0;

/// Sums term weights smallest first and rounds the sum to [`SCORE_GRID`].
/// Scores that are equal in exact arithmetic then compare equal, so the unit
/// id tie-break applies to them.
fn sum_ascending(parts: &mut [f64]) -> f64 {
    parts.sort_by(f64::total_cmp);
    libm::round(parts.iter().sum::<f64>() / SCORE_GRID) * SCORE_GRID
}

pub(crate) fn idf(n: usize, df: usize) -> f64 {
    let (n, df) = (n as f64, df as f64);
    math::ln(1.0 + (n - df + 0.5) / (df + 0.5))
}
