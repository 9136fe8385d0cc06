//! Binary index snapshots.
//!
//! All integers are little-endian; a string is a `u32` byte length followed
//! by UTF-8 bytes.
//!
//! ```text
//! magic        8 bytes   "SRINDEX\n"
//! version      u32       1
//! granularity  u8        0 abstract, 1 fulltext, 2 paragraph
//! k1, b        f64, f64
//! units        u32 count, then per unit:
//!                unit_id str, article_id str,
//!                paragraph u32 (u32::MAX when absent), length u32, text str
//! terms        u32 count, then per term in ascending order:
//!                term str, u32 posting count, then (unit u32, tf u32) pairs
//! ```
//!
//! Loading checks the header, rejects trailing bytes and rebuilds the index
//! through [`InvertedIndex::from_parts`], which validates the payload.

use std::collections::BTreeMap;
use std::path::Path;

use stagerank_core::index::{Posting, UnitRecord};
use stagerank_core::{Bm25Params, Granularity, InvertedIndex};

use super::write_atomic;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SRINDEX\n";
pub const VERSION: u32 = 1;
const NO_PARAGRAPH: u32 = u32::MAX;

fn granularity_code(g: Granularity) -> u8 {
    match g {
        Granularity::Abstract => 0,
        Granularity::FullText => 1,
        Granularity::Paragraph => 2,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn count(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("snapshot counts fit in u32"));
    }

    fn str(&mut self, s: &str) {
        self.count(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

pub fn encode(index: &InvertedIndex) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.0.push(granularity_code(index.granularity()));
    w.f64(index.params().k1);
    w.f64(index.params().b);
    w.count(index.len());
    for u in index.units() {
        w.str(&u.unit_id);
        w.str(&u.article_id);
        w.u32(u.paragraph_index.map_or(NO_PARAGRAPH, |p| p as u32));
        w.u32(u.length);
        w.str(&u.text);
    }
    w.count(index.vocabulary_size());
    for (term, postings) in index.terms() {
        w.str(term);
        w.count(postings.len());
        for p in postings {
            w.u32(p.unit);
            w.u32(p.tf);
        }
    }
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn str(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format!("invalid UTF-8 at byte {at}"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<InvertedIndex, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err("not an index snapshot".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported snapshot version {version}"));
    }
    let code = r.u8()?;
    let granularity = Granularity::ALL
        .into_iter()
        .find(|&g| granularity_code(g) == code)
        .ok_or_else(|| format!("unknown granularity code {code}"))?;
    let params = Bm25Params {
        k1: r.f64()?,
        b: r.f64()?,
    };
    let n_units = r.u32()?;
    let mut units = Vec::new();
    for _ in 0..n_units {
        let unit_id = r.str()?;
        let article_id = r.str()?;
        let paragraph = r.u32()?;
        let length = r.u32()?;
        let text = r.str()?;
        units.push(UnitRecord {
            unit_id,
            article_id,
            paragraph_index: (paragraph != NO_PARAGRAPH).then_some(paragraph as usize),
            text,
            length,
        });
    }
    let n_terms = r.u32()?;
    let mut postings = BTreeMap::new();
    for _ in 0..n_terms {
        let term = r.str()?;
        let n = r.u32()?;
        let mut list = Vec::new();
        for _ in 0..n {
            list.push(Posting {
                unit: r.u32()?,
                tf: r.u32()?,
            });
        }
        if postings.insert(term.clone(), list).is_some() {
            return Err(format!("term {term:?} stored twice"));
        }
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    InvertedIndex::from_parts(granularity, units, postings)
        .map(|idx| idx.with_params(params))
        .map_err(|e| e.to_string())
}

pub fn save(index: &InvertedIndex, path: &Path) -> Result<()> {
    write_atomic(path, &encode(index))
}

pub fn load(path: &Path) -> Result<InvertedIndex> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|m| Error::data(format!("{}: {m}", path.display())))
}

/// Snapshot file name for a granularity inside an index directory.
pub fn file_name(g: Granularity) -> String {
    format!("{}.idx", g.as_str())
}
