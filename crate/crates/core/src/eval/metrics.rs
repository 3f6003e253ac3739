use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CandidateSet, PassageId};
use crate::scalar::Scalar;

/// Ranked passage IDs per query ID, best first.
pub type RankedResults = BTreeMap<String, Vec<PassageId>>;

/// Binary relevance judgments: query ID to relevant passage IDs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QrelsTable {
    relevant: BTreeMap<String, BTreeSet<PassageId>>,
}

impl QrelsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: impl Into<String>, passage: PassageId) {
        self.relevant.entry(query.into()).or_default().insert(passage);
    }

    /// TREC format, `qid iter pid rel` per line, or two-column `qid pid`.
    /// Lines with `rel <= 0` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::new();
        for (n, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |what: &str| Error::Parse(format!("qrels line {}: {what}", n + 1));
            let (qid, pid, rel) = match f.len() {
                0 => continue,
                2 => (f[0], f[1], "1"),
                4 => (f[0], f[2], f[3]),
                _ => return Err(bad("expected `qid 0 pid rel` or `qid pid`")),
            };
            let pid: PassageId = pid.parse().map_err(|_| bad("passage id is not an integer"))?;
            let rel: i64 = rel.parse().map_err(|_| bad("relevance is not an integer"))?;
            if rel > 0 {
                table.insert(qid, pid);
            }
        }
        Ok(table)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Errors if any judged passage lies outside `0..num_passages`.
    pub fn validate(&self, num_passages: usize) -> Result<()> {
        for (q, ps) in &self.relevant {
            if let Some(&p) = ps.iter().find(|&&p| p as usize >= num_passages) {
                return Err(Error::InvariantViolation(format!(
                    "qrels for query {q} reference passage {p}, corpus has {num_passages}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_queries(&self) -> usize {
        self.relevant.len()
    }

    pub fn relevant(&self, query: &str) -> Option<&BTreeSet<PassageId>> {
        self.relevant.get(query)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<PassageId>)> {
        self.relevant.iter()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    /// Queries with judgments; every mean is over this count.
    pub num_queries: usize,
    pub mrr_at_10: f64,
    /// Recall at each requested cutoff.
    pub recall: BTreeMap<usize, f64>,
    pub success_at_5: f64,
}

/// MRR@10, Recall@`cuts` and Success@5, averaged over the judged queries. A
/// judged query with no results scores zero; results for an unjudged query are
/// an error.
pub fn compute_metrics(results: &RankedResults, qrels: &QrelsTable, cuts: &[usize]) -> Result<MetricReport> {
    if let Some(q) = results.keys().find(|q| qrels.relevant(q).is_none()) {
        return Err(Error::UnknownQueryId(q.clone()));
    }
    for (q, ranked) in results {
        let mut seen = BTreeSet::new();
        if let Some(p) = ranked.iter().find(|&&p| !seen.insert(p)) {
            return Err(Error::Parse(format!("query {q} lists passage {p} twice")));
        }
    }
    let mut mrr = 0.0;
    let mut success = 0.0;
    let mut recall: BTreeMap<usize, f64> = cuts.iter().map(|&c| (c, 0.0)).collect();
    for (q, rel) in qrels.iter() {
        let ranked = results.get(q).map(Vec::as_slice).unwrap_or(&[]);
        if let Some(pos) = ranked.iter().take(10).position(|p| rel.contains(p)) {
            mrr += 1.0 / (pos + 1) as f64;
        }
        if ranked.iter().take(5).any(|p| rel.contains(p)) {
            success += 1.0;
        }
        for (&cut, acc) in recall.iter_mut() {
            let hits = ranked.iter().take(cut).filter(|p| rel.contains(p)).count();
            *acc += hits as f64 / rel.len() as f64;
        }
    }
    let n = qrels.num_queries();
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(MetricReport {
        num_queries: n,
        mrr_at_10: mean(mrr),
        recall: recall.into_iter().map(|(c, v)| (c, mean(v))).collect(),
        success_at_5: mean(success),
    })
}

/// One line per result: `query_id<TAB>rank<TAB>passage_id<TAB>score`, ranks
/// 1-based, scores to 6 decimals.
pub fn format_results_tsv<'a, T: Scalar>(
    results: impl IntoIterator<Item = (&'a str, &'a CandidateSet<T>)>,
) -> String {
    let mut out = String::new();
    for (qid, set) in results {
        for (rank, (pid, score)) in set.iter_scored().enumerate() {
            writeln!(out, "{qid}\t{}\t{pid}\t{:.6}", rank + 1, score.as_f64()).unwrap();
        }
    }
    out
}

/// Reads a results TSV back into ranked lists, ordering each query by rank.
pub fn parse_results_tsv(text: &str) -> Result<RankedResults> {
    let mut rows: BTreeMap<String, Vec<(usize, PassageId)>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("results line {}: {what}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 3 {
            return Err(bad("expected query_id, rank, passage_id[, score]"));
        }
        let rank: usize = f[1].parse().map_err(|_| bad("rank is not an integer"))?;
        let pid: PassageId = f[2].parse().map_err(|_| bad("passage id is not an integer"))?;
        rows.entry(f[0].to_string()).or_default().push((rank, pid));
    }
    Ok(rows
        .into_iter()
        .map(|(q, mut v)| {
            v.sort_by_key(|&(r, _)| r);
            (q, v.into_iter().map(|(_, p)| p).collect())
        })
        .collect())
}
