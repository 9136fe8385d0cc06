//! Brute-force reference implementations, written from the definitions and
//! sharing no code with the library.

use std::collections::{BTreeMap, BTreeSet};

/// BM25 with Lucene idf over pre-tokenized units, term weights summed
/// smallest first and rounded to multiples of 2⁻³²; zero scores are dropped
/// and ties go to the smaller unit id.
pub fn bm25_rank(
    units: &[(String, Vec<String>)],
    query: &[String],
    k1: f64,
    b: f64,
) -> Vec<(String, f64)> {
    let n = units.len() as f64;
    let total: usize = units.iter().map(|(_, t)| t.len()).sum();
    let avg_dl = total as f64 / n;
    let df = |term: &str| {
        units
            .iter()
            .filter(|(_, t)| t.iter().any(|x| x == term))
            .count() as f64
    };
    let mut out: Vec<(String, f64)> = units
        .iter()
        .map(|(id, tokens)| {
            let dl = tokens.len() as f64;
            let mut parts = Vec::new();
            for q in query {
                let tf = tokens.iter().filter(|t| *t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let d = df(q);
                let idf = (1.0 + (n - d + 0.5) / (d + 0.5)).ln();
                let norm = if avg_dl > 0.0 {
                    1.0 - b + b * dl / avg_dl
                } else {
                    1.0
                };
                parts.push(idf * tf * (k1 + 1.0) / (tf + k1 * norm));
            }
            parts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let grid = 2f64.powi(32);
            (
                id.clone(),
                (parts.iter().sum::<f64>() * grid).round() / grid,
            )
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

/// Reciprocal rank fusion over `(doc, rank)` lists, contributions summed in
/// ascending order.
pub fn rrf(lists: &[Vec<(String, usize)>], k: f64, depth: usize) -> Vec<(String, f64)> {
    let mut parts: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for list in lists {
        for (doc, rank) in list {
            if *rank <= depth {
                parts
                    .entry(doc.clone())
                    .or_default()
                    .push(1.0 / (k + *rank as f64));
            }
        }
    }
    let mut out: Vec<(String, f64)> = parts
        .into_iter()
        .map(|(d, mut p)| {
            p.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (d, p.iter().sum())
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out.truncate(depth);
    out
}

/// Preference sums `s_i = Σ_{j≠i} p[i][j] + 1 - p[j][i]` and the resulting
/// order, ties by position.
pub fn pairwise(p: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let n = p.len();
    let mut s = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s[i] += p[i][j] + (1.0 - p[j][i]);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
    (s, order)
}

/// Sentence windows by enumeration: every stride offset proposes a window,
/// kept unless its sentence set lies inside an already kept window.
pub fn windows(count: usize, size: usize, stride: usize) -> Vec<Vec<usize>> {
    let mut kept: Vec<BTreeSet<usize>> = Vec::new();
    let mut offset = 0;
    while offset < count {
        let set: BTreeSet<usize> = (offset..count.min(offset + size)).collect();
        if !kept.iter().any(|k| set.is_subset(k)) {
            kept.push(set);
        }
        offset += stride;
    }
    kept.into_iter().map(|s| s.into_iter().collect()).collect()
}

pub type Judged = BTreeMap<String, u8>;

pub fn ndcg(run: &[String], judged: &Judged, k: usize) -> Option<f64> {
    if judged.is_empty() {
        return None;
    }
    let dcg = |grades: &[f64]| -> f64 {
        grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, g)| g / ((i + 2) as f64).log2())
            .sum()
    };
    let gains: Vec<f64> = run
        .iter()
        .map(|d| judged.get(d).map_or(0.0, |&g| g as f64))
        .collect();
    let mut ideal: Vec<f64> = judged.values().map(|&g| g as f64).collect();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg = dcg(&ideal);
    (idcg > 0.0).then(|| dcg(&gains) / idcg)
}

pub fn precision(run: &[String], judged: &Judged, k: usize) -> f64 {
    run.iter()
        .take(k)
        .filter(|d| judged.get(*d).is_some_and(|&g| g > 0))
        .count() as f64
        / k as f64
}

pub fn judged_fraction(run: &[String], judged: &Judged, k: usize) -> f64 {
    run.iter()
        .take(k)
        .filter(|d| judged.contains_key(*d))
        .count() as f64
        / k as f64
}

pub fn average_precision(run: &[String], judged: &Judged, depth: usize) -> Option<f64> {
    let r = judged.values().filter(|&&g| g > 0).count();
    if r == 0 {
        return None;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, d) in run.iter().take(depth).enumerate() {
        if judged.get(d).is_some_and(|&g| g > 0) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / r as f64)
}
