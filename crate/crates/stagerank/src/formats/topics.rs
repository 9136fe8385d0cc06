//! Topic files, either one JSON object per line
//! (`{"number":1,"query":...,"question":...,"narrative":...}`) or the TREC
//! XML layout (`<topic number="1">` with `<query>`, `<question>` and
//! `<narrative>` children). The format is picked from the first
//! non-whitespace character.

use std::path::Path;

use serde::Deserialize;
use stagerank_core::topics::validate_topics;
use stagerank_core::Topic;

use super::read_text;
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Record {
    number: u32,
    query: String,
    #[serde(default)]
    question: String,
    #[serde(default)]
    narrative: String,
}

fn parse_lines(text: &str, path: &Path) -> Result<Vec<Topic>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e))?;
        out.push(Topic {
            topic_id: r.number,
            query: r.query,
            question: r.question,
            narrative: r.narrative,
        });
    }
    Ok(out)
}

fn line_of(doc: &roxmltree::Document<'_>, node: roxmltree::Node<'_, '_>) -> usize {
    doc.text_pos_at(node.range().start).row as usize
}

fn parse_xml(text: &str, path: &Path) -> Result<Vec<Topic>> {
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| Error::parse(path, e.pos().row as usize, e))?;
    let mut out = Vec::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("topic")) {
        let line = line_of(&doc, node);
        let number = node
            .attribute("number")
            .ok_or_else(|| Error::parse(path, line, "topic without a number attribute"))?;
        let topic_id = number
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("invalid topic number {number:?}")))?;
        let field = |name: &str| -> String {
            node.children()
                .find(|c| c.has_tag_name(name))
                .and_then(|c| c.text())
                .map(|t| t.trim().to_string())
                .unwrap_or_default()
        };
        out.push(Topic {
            topic_id,
            query: field("query"),
            question: field("question"),
            narrative: field("narrative"),
        });
    }
    Ok(out)
}

/// Parses and validates a topic file, returning topics in ascending id order.
pub fn parse_topics(text: &str, path: &Path) -> Result<Vec<Topic>> {
    let mut topics = if text.trim_start().starts_with('<') {
        parse_xml(text, path)?
    } else {
        parse_lines(text, path)?
    };
    validate_topics(&topics).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    topics.sort_by_key(|t| t.topic_id);
    Ok(topics)
}

pub fn read_topics(path: &Path) -> Result<Vec<Topic>> {
    parse_topics(&read_text(path)?, path)
}
