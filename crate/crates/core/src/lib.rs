//! Multi-stage ranking for scientific literature search.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. Everything
//! that touches files, sockets or processes lives in the `stagerank` crate.
//!
//! Pipeline pieces, in the order a query flows through them:
//!
//! - [`corpus`]: articles and the retrieval units derived from them
//! - [`index`]: tokenization, the inverted index and BM25 retrieval
//! - [`topics`]: topics and keyword query generation
//! - [`fusion`]: ranked lists, paragraph max-aggregation and reciprocal rank fusion
//! - [`rerank`]: pointwise (span-max) and pairwise (preference sum) rerankers
//! - [`feedback`]: qrels, a per-topic logistic regression classifier, residual filtering
//! - [`eval`]: nDCG@k, P@k, AP and judged@k
//! - [`engine`]: the interactive search engine (facets, highlighting, pagination)

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod engine;
pub mod eval;
pub mod feedback;
pub mod fusion;
pub mod index;
pub mod rerank;
pub mod topics;

pub(crate) mod math;

pub use corpus::{Article, Granularity, RetrievalUnit};
pub use eval::{evaluate, EvalReport, RunFile};
pub use feedback::{FeedbackModel, Qrels};
pub use fusion::{RankedEntry, RankedList};
pub use index::{Bm25Params, InvertedIndex};
pub use rerank::{ReferenceScorer, Scorer, ScorerError};
pub use topics::{QueryRepresentation, Topic};
