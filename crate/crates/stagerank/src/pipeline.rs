//! Batch run recipes.
//!
//! | variant   | ranking                                                        |
//! |-----------|----------------------------------------------------------------|
//! | `fusion1` | RRF over the three indexes, query field only                   |
//! | `fusion2` | RRF over the three indexes, query field plus question terms    |
//! | `monot5`  | RRF of the pointwise reranking of `fusion1` and of `fusion2`   |
//! | `duot5`   | pairwise reranking of the top of `monot5`                      |
//! | `t5_lr`   | `monot5` interpolated with a per-topic relevance classifier    |
//!
//! Rerankers read the full-text unit of each article and are queried with the
//! topic's question (its query field when the question is empty). The
//! classifier reads the abstract unit. Residual filtering, when requested,
//! runs last.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use stagerank_core::eval::RunFile;
use stagerank_core::feedback::{
    classify_interpolate, residual_filter, train_classifier, FeedbackError, TrainConfig,
};
use stagerank_core::fusion::{
    fuse_indexes, fusion_run, rrf, FusionIndexes, FusionVariant, DEFAULT_DEPTH, DEFAULT_K_RRF,
};
use stagerank_core::rerank::{
    make_windows, pairwise_rerank, pointwise_rerank, truncate_tokens, DocumentStore, Scorer,
    DEFAULT_MAX_TOKENS, DEFAULT_RERANK_DEPTH,
};
use stagerank_core::topics::{query_with_expansion, DEFAULT_THETA};
use stagerank_core::{Granularity, InvertedIndex, Qrels, RankedList, Topic};

use crate::error::{Error, Result};
use crate::formats::snapshot;
use crate::scorer::TermExtractor;

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Fusion1,
    Fusion2,
    Monot5,
    Duot5,
    T5Lr,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Self::Fusion1,
        Self::Fusion2,
        Self::Monot5,
        Self::Duot5,
        Self::T5Lr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fusion1 => "fusion1",
            Self::Fusion2 => "fusion2",
            Self::Monot5 => "monot5",
            Self::Duot5 => "duot5",
            Self::T5Lr => "t5_lr",
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// The abstract, full-text and paragraph indexes of one corpus.
#[derive(Debug, Clone)]
pub struct Indexes {
    pub abstracts: InvertedIndex,
    pub fulltext: InvertedIndex,
    pub paragraph: InvertedIndex,
}

impl Indexes {
    /// Loads `abstract.idx`, `fulltext.idx` and `paragraph.idx` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let load = |g: Granularity| -> Result<InvertedIndex> {
            let idx = snapshot::load(&dir.join(snapshot::file_name(g)))?;
            if idx.granularity() != g {
                return Err(Error::data(format!(
                    "{}: holds a {} index",
                    dir.join(snapshot::file_name(g)).display(),
                    idx.granularity()
                )));
            }
            Ok(idx)
        };
        Ok(Self {
            abstracts: load(Granularity::Abstract)?,
            fulltext: load(Granularity::FullText)?,
            paragraph: load(Granularity::Paragraph)?,
        })
    }

    pub fn fusion(&self) -> FusionIndexes<'_> {
        FusionIndexes {
            abstracts: &self.abstracts,
            fulltext: &self.fulltext,
            paragraph: &self.paragraph,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub depth: usize,
    pub rerank_depth: usize,
    pub max_tokens: usize,
    pub k_rrf: f64,
    pub theta: f64,
    pub alpha: f64,
    pub residual: bool,
}

impl RunConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            depth: DEFAULT_DEPTH,
            rerank_depth: DEFAULT_RERANK_DEPTH,
            max_tokens: DEFAULT_MAX_TOKENS,
            k_rrf: DEFAULT_K_RRF,
            theta: DEFAULT_THETA,
            alpha: DEFAULT_ALPHA,
            residual: false,
        }
    }

    pub fn needs_qrels(&self) -> bool {
        self.residual || self.variant == Variant::T5Lr
    }
}

/// Shared inputs of a run.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub indexes: &'a Indexes,
    pub scorer: &'a (dyn Scorer + Sync),
    pub extractor: Option<&'a dyn TermExtractor>,
    pub qrels: Option<&'a Qrels>,
}

/// Query text handed to the rerankers.
pub fn rerank_query(topic: &Topic) -> &str {
    if topic.question.trim().is_empty() {
        &topic.query
    } else {
        &topic.question
    }
}

/// Best pointwise windows, falling back to the first window of the full text.
struct Passages<'a> {
    best: &'a BTreeMap<String, String>,
    fulltext: &'a InvertedIndex,
    max_tokens: usize,
}

impl DocumentStore for Passages<'_> {
    fn text(&self, doc_id: &str) -> Option<Cow<'_, str>> {
        if let Some(w) = self.best.get(doc_id) {
            return Some(Cow::Borrowed(w.as_str()));
        }
        let text = self.fulltext.text(doc_id)?;
        let first = make_windows(&text).into_iter().next().unwrap_or_default();
        Some(Cow::Owned(
            truncate_tokens(&first, self.max_tokens).to_string(),
        ))
    }
}

fn fusion_error(topic: &Topic, e: impl std::fmt::Display) -> Error {
    Error::data(format!("topic {}: {e}", topic.topic_id))
}

fn fusion(
    ctx: &RunContext<'_>,
    cfg: &RunConfig,
    topic: &Topic,
    second: bool,
) -> Result<RankedList> {
    let indexes = ctx.indexes.fusion();
    let list = match (second, ctx.extractor) {
        (false, _) => fusion_run(
            topic,
            &indexes,
            FusionVariant::Fusion1,
            cfg.depth,
            cfg.k_rrf,
        ),
        (true, None) => fusion_run(
            topic,
            &indexes,
            FusionVariant::Fusion2 { theta: cfg.theta },
            cfg.depth,
            cfg.k_rrf,
        ),
        (true, Some(extractor)) => {
            let terms = extractor.extract(&topic.question)?;
            let query = query_with_expansion(topic, terms);
            fuse_indexes(&query, &indexes, cfg.depth, cfg.k_rrf).map(|l| l.with_tag("fusion2"))
        }
    };
    list.map_err(|e| fusion_error(topic, e))
}

/// The monot5 list plus the best window of every reranked document.
fn monot5(
    ctx: &RunContext<'_>,
    cfg: &RunConfig,
    topic: &Topic,
) -> Result<(RankedList, BTreeMap<String, String>)> {
    let query = rerank_query(topic);
    let mut lists = Vec::new();
    let mut best = BTreeMap::new();
    for second in [false, true] {
        let first = fusion(ctx, cfg, topic, second)?;
        let out = pointwise_rerank(
            ctx.scorer,
            query,
            &first,
            &ctx.indexes.fulltext,
            cfg.rerank_depth,
            cfg.max_tokens,
        )?;
        lists.push(out.list);
        best.extend(out.best_windows);
    }
    let fused = rrf(&lists, cfg.k_rrf, cfg.depth).map_err(|e| fusion_error(topic, e))?;
    Ok((fused, best))
}

/// Runs one topic through the configured recipe.
pub fn run_topic(ctx: &RunContext<'_>, cfg: &RunConfig, topic: &Topic) -> Result<RankedList> {
    let list = match cfg.variant {
        Variant::Fusion1 => fusion(ctx, cfg, topic, false)?,
        Variant::Fusion2 => fusion(ctx, cfg, topic, true)?,
        Variant::Monot5 => monot5(ctx, cfg, topic)?.0,
        Variant::Duot5 => {
            let (mono, best) = monot5(ctx, cfg, topic)?;
            let passages = Passages {
                best: &best,
                fulltext: &ctx.indexes.fulltext,
                max_tokens: cfg.max_tokens,
            };
            pairwise_rerank(ctx.scorer, rerank_query(topic), &mono, &passages)?
        }
        Variant::T5Lr => {
            let qrels = ctx
                .qrels
                .ok_or_else(|| Error::Usage("t5_lr needs --qrels".into()))?;
            let (mono, _) = monot5(ctx, cfg, topic)?;
            let docs = &ctx.indexes.abstracts;
            match train_classifier(topic.topic_id, qrels, docs, docs, &TrainConfig::default()) {
                Ok(model) => classify_interpolate(&model, &mono, docs, cfg.alpha)
                    .map_err(|e| fusion_error(topic, e))?,
                Err(FeedbackError::SingleClass(_)) => {
                    log::warn!(
                        "topic {}: no usable training judgments, keeping monot5 order",
                        topic.topic_id
                    );
                    mono
                }
                Err(e) => return Err(fusion_error(topic, e)),
            }
        }
    };
    let list = match (cfg.residual, ctx.qrels) {
        (false, _) => list,
        (true, Some(qrels)) => residual_filter(&list, qrels),
        (true, None) => return Err(Error::Usage("--residual needs --qrels".into())),
    };
    Ok(list)
}

/// Runs every topic on a pool of `jobs` threads. The output does not depend
/// on `jobs`.
pub fn run_topics(
    ctx: &RunContext<'_>,
    cfg: &RunConfig,
    topics: &[Topic],
    tag: &str,
    jobs: usize,
) -> Result<RunFile> {
    if cfg.needs_qrels() && ctx.qrels.is_none() {
        return Err(Error::Usage(format!(
            "{} needs --qrels",
            if cfg.residual { "--residual" } else { "t5_lr" }
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::data(format!("cannot start worker threads: {e}")))?;
    let lists: Vec<RankedList> = pool.install(|| {
        topics
            .par_iter()
            .map(|t| run_topic(ctx, cfg, t))
            .collect::<Result<_>>()
    })?;
    let mut run = RunFile::new(tag);
    for list in lists {
        run.insert(list);
    }
    Ok(run)
}
