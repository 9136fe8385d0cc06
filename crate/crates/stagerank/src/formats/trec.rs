//! TREC run and qrels files.
//!
//! Run lines are `topic Q0 doc rank score tag`. Scores are written with the
//! shortest representation that parses back to the same value, so writing a
//! parsed file reproduces it byte for byte. Within a topic, lines must appear
//! in rank order starting at 1 with non-increasing scores.
//!
//! Qrels lines are `topic iteration doc grade`; grades outside 0..=2 are
//! clamped with a warning.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use stagerank_core::eval::RunFile;
use stagerank_core::{Qrels, RankedList};

use super::read_text;
use crate::error::{Error, Result};

/// Most entries a run may hold per topic.
pub const MAX_RUN_DEPTH: usize = 1000;

pub fn write_run(run: &RunFile) -> String {
    let mut out = String::new();
    for list in run.lists() {
        for e in list.entries() {
            writeln!(
                out,
                "{} Q0 {} {} {} {}",
                list.topic_id(),
                e.doc_id,
                e.rank,
                e.score,
                run.tag
            )
            .expect("writing to a string");
        }
    }
    out
}

pub fn parse_run(text: &str, path: &Path) -> Result<RunFile> {
    struct Pending {
        first_line: usize,
        entries: Vec<(String, f64)>,
    }
    let mut tag: Option<String> = None;
    let mut topics: BTreeMap<u32, Pending> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let err = |m: String| Error::parse(path, n, m);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [topic, _q0, doc, rank, score, t] = cols[..] else {
            return Err(err(format!("expected 6 columns, found {}", cols.len())));
        };
        let topic: u32 = topic
            .parse()
            .map_err(|_| err(format!("invalid topic id {topic:?}")))?;
        let rank: usize = rank
            .parse()
            .map_err(|_| err(format!("invalid rank {rank:?}")))?;
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| err(format!("invalid score {score:?}")))?;
        match &tag {
            None => tag = Some(t.to_string()),
            Some(existing) if existing != t => {
                return Err(err(format!("run tag {t:?} differs from {existing:?}")));
            }
            Some(_) => {}
        }
        let pending = topics.entry(topic).or_insert(Pending {
            first_line: n,
            entries: Vec::new(),
        });
        let expected = pending.entries.len() + 1;
        if rank != expected {
            return Err(err(format!(
                "rank {rank} out of sequence, expected {expected}"
            )));
        }
        if let Some(&(_, prev)) = pending.entries.last() {
            if score > prev {
                return Err(err(format!(
                    "score {score} above the previous rank's {prev}"
                )));
            }
        }
        if pending.entries.iter().any(|(d, _)| d == doc) {
            return Err(err(format!("document {doc:?} repeated in topic {topic}")));
        }
        if expected > MAX_RUN_DEPTH {
            return Err(err(format!(
                "topic {topic} exceeds {MAX_RUN_DEPTH} entries"
            )));
        }
        pending.entries.push((doc.to_string(), score));
    }
    let mut run = RunFile::new(tag.unwrap_or_default());
    for (topic, p) in topics {
        let list = RankedList::from_sorted(topic, run.tag.clone(), p.entries)
            .map_err(|e| Error::parse(path, p.first_line, e))?;
        run.insert(list);
    }
    Ok(run)
}

pub fn read_run(path: &Path) -> Result<RunFile> {
    parse_run(&read_text(path)?, path)
}

pub fn parse_qrels(text: &str, path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [topic, iteration, doc, grade] = cols[..] else {
            return Err(Error::parse(
                path,
                n,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        };
        let topic: u32 = topic
            .parse()
            .map_err(|_| Error::parse(path, n, format!("invalid topic id {topic:?}")))?;
        let grade: i64 = grade
            .parse()
            .map_err(|_| Error::parse(path, n, format!("invalid grade {grade:?}")))?;
        let clamped = qrels
            .insert(topic, iteration, doc, grade)
            .map_err(|e| Error::parse(path, n, e))?;
        if let Some(c) = clamped {
            log::warn!(
                "{}:{n}: grade {} clamped to {}",
                path.display(),
                c.original,
                c.stored
            );
        }
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (topic, doc, j) in qrels.iter() {
        writeln!(out, "{topic} {} {doc} {}", j.iteration, j.grade).expect("writing to a string");
    }
    out
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels(&read_text(path)?, path)
}
