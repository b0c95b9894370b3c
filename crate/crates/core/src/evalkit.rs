//! nDCG@k / Recall@k and TREC qrels / run file handling.
//!
//! Qrels lines: `qid 0 docid grade`. Run lines: `qid Q0 docid rank score tag`.
//! Only queries present in both the run and the qrels, with at least one
//! positively graded document, enter the mean.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io_util::atomic_write;
use crate::types::ScoredHit;

/// query id → doc id → grade.
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;

/// query id → ranked (doc id, score) list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub queries: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one query's hits; they must already be in result-list order.
    pub fn insert_hits(&mut self, query_id: impl Into<String>, hits: &[ScoredHit]) {
        self.queries
            .insert(query_id.into(), hits.iter().map(|h| (h.doc_id.clone(), h.score)).collect());
    }

    pub fn ranked_ids(&self, query_id: &str) -> Vec<&str> {
        self.queries
            .get(query_id)
            .map(|v| v.iter().map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub k: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Queries in the run with no qrels entry (or no relevant document).
    pub excluded: usize,
}

fn gain(grade: u32) -> f64 {
    (2f64).powi(grade as i32) - 1.0
}

fn discount(rank0: usize) -> f64 {
    ((rank0 + 2) as f64).log2()
}

/// nDCG@k of a single ranking against graded judgments; `None` when no
/// document has a positive grade.
pub fn ndcg_single(ranked: &[&str], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| gain(g) / discount(i)).sum();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judged.get(*d).copied().unwrap_or(0)) / discount(i))
        .sum();
    Some(dcg / idcg)
}

/// Fraction of positively graded documents found in the top `k`.
pub fn recall_single(ranked: &[&str], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let relevant = judged.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return None;
    }
    let found = ranked.iter().take(k).filter(|d| judged.get(**d).is_some_and(|&g| g > 0)).count();
    Some(found as f64 / relevant as f64)
}

type SingleMetric = fn(&[&str], &BTreeMap<String, u32>, usize) -> Option<f64>;

fn evaluate(
    name: &str,
    run: &RunFile,
    qrels: &Qrels,
    k: usize,
    f: SingleMetric,
) -> Result<MetricReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let mut per_query = BTreeMap::new();
    let mut excluded = 0;
    for qid in run.queries.keys() {
        let value = qrels.get(qid).and_then(|j| f(&run.ranked_ids(qid), j, k));
        match value {
            Some(v) => {
                per_query.insert(qid.clone(), v);
            }
            None => excluded += 1,
        }
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok(MetricReport { metric: name.to_string(), k, per_query, mean, excluded })
}

pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    evaluate("ndcg", run, qrels, k, ndcg_single)
}

pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    evaluate("recall", run, qrels, k, recall_single)
}

pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: u32 = fields[3]
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("bad grade `{}`", fields[3])))?;
        qrels.entry(fields[0].to_string()).or_default().insert(fields[2].to_string(), grade);
    }
    Ok(qrels)
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels(&fs::read_to_string(path)?)
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (q, docs) in qrels {
        for (d, g) in docs {
            let _ = writeln!(out, "{q} 0 {d} {g}");
        }
    }
    out
}

pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    atomic_write(path, format_qrels(qrels).as_bytes())
}

/// Run file text; scores use the shortest round-trip decimal form.
pub fn format_run(run: &RunFile, tag: &str) -> String {
    let mut out = String::new();
    for (q, hits) in &run.queries {
        for (rank, (d, s)) in hits.iter().enumerate() {
            let _ = writeln!(out, "{q} Q0 {d} {} {s} {tag}", rank + 1);
        }
    }
    out
}

pub fn write_run(run: &RunFile, path: &Path, tag: &str) -> Result<()> {
    atomic_write(path, format_run(run, tag).as_bytes())
}

pub fn parse_run(text: &str) -> Result<RunFile> {
    let mut run = RunFile::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::parse(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        f[3].parse::<usize>().map_err(|_| Error::parse(i + 1, format!("bad rank `{}`", f[3])))?;
        let score: f64 =
            f[4].parse().map_err(|_| Error::parse(i + 1, format!("bad score `{}`", f[4])))?;
        if !score.is_finite() {
            return Err(Error::parse(i + 1, "non-finite score"));
        }
        if !seen.insert((f[0].to_string(), f[2].to_string())) {
            return Err(Error::parse(
                i + 1,
                format!("duplicate doc `{}` for query `{}`", f[2], f[0]),
            ));
        }
        run.queries.entry(f[0].to_string()).or_default().push((f[2].to_string(), score));
    }
    for hits in run.queries.values_mut() {
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    }
    Ok(run)
}

pub fn read_run(path: &Path) -> Result<RunFile> {
    parse_run(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judged(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn ndcg_examples() {
        let j = judged(&[("d2", 1)]);
        let v = ndcg_single(&["d1", "d2", "d3"], &j, 10).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.63093).abs() < 1e-5);
        assert_eq!(ndcg_single(&["d2", "d1"], &j, 10), Some(1.0));
        assert_eq!(ndcg_single(&["d1", "d3"], &j, 10), Some(0.0));
        assert_eq!(ndcg_single(&["d1", "d2"], &j, 1), Some(0.0));
        assert_eq!(ndcg_single(&["d1"], &judged(&[("d1", 0)]), 10), None);
        let graded = judged(&[("a", 2), ("b", 1)]);
        assert_eq!(ndcg_single(&["a", "b"], &graded, 10), Some(1.0));
        assert!(ndcg_single(&["b", "a"], &graded, 10).unwrap() < 1.0);
    }

    #[test]
    fn recall_examples() {
        let j = judged(&[("a", 1), ("b", 2), ("c", 0)]);
        assert_eq!(recall_single(&["a", "x", "b"], &j, 10), Some(1.0));
        assert_eq!(recall_single(&["a", "x", "b"], &j, 2), Some(0.5));
    }

    #[test]
    fn missing_queries_are_excluded() {
        let mut run = RunFile::new();
        run.queries.insert("q1".into(), vec![("d1".into(), 1.0)]);
        run.queries.insert("q2".into(), vec![("d1".into(), 1.0)]);
        let qrels = parse_qrels("q1 0 d1 1\n").unwrap();
        let r = ndcg_at_k(&run, &qrels, 10).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.excluded, 1);
        assert!(ndcg_at_k(&run, &qrels, 0).is_err());
    }

    #[test]
    fn qrels_parsing() {
        let q = parse_qrels("q1 0 d7 1\n\nq1 0 d8 0\n").unwrap();
        assert_eq!(q["q1"]["d7"], 1);
        assert_eq!(q["q1"].len(), 2);
        assert!(matches!(parse_qrels("q1 0 d7 1\nq1 0 d7\n"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_qrels("q1 0 d7 -1\n").is_err());
    }

    #[test]
    fn run_round_trip_preserves_order() {
        let mut run = RunFile::new();
        run.queries.insert(
            "q1".into(),
            vec![("z".into(), 0.9), ("a".into(), 0.5), ("b".into(), 0.5), ("c".into(), 1.0 / 3.0)],
        );
        run.queries.insert("q0".into(), vec![("a".into(), -2.5e-7)]);
        let text = format_run(&run, "test");
        assert!(text.contains("q1 Q0 z 1 0.9 test\n"));
        let back = parse_run(&text).unwrap();
        assert_eq!(back, run);
        assert_eq!(format_run(&back, "test"), text);
        assert!(parse_run("q1 Q0 d1 1 0.5 t\nq1 Q0 d1 2 0.4 t\n").is_err());
        assert!(matches!(parse_run("q1 Q0 d1 1 t\n"), Err(Error::Parse { line: 1, .. })));
    }
}
