use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::CompressedIndex;
use crate::model::{QueryMatrix, SearchParams};
use crate::pipeline::{
    centroid_only_search, compute_centroid_scores, exhaustive_search, search, search_unfiltered,
    LatencyBreakdown,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SelfRecallPoint {
    pub k: usize,
    pub kprime: usize,
    pub recall: f64,
}

/// `{10, 100, 1000}` restricted to the corpus size; `[num_passages]` when the
/// corpus is smaller than 10.
pub fn default_self_recall_ks(num_passages: usize) -> Vec<usize> {
    let ks: Vec<usize> = [10, 100, 1000].into_iter().filter(|&k| k <= num_passages).collect();
    if ks.is_empty() {
        vec![num_passages]
    } else {
        ks
    }
}

/// `1, 2, 5 x 10^i` values in `[k, num_passages)`, then `num_passages`.
pub fn default_kprime_grid(k: usize, num_passages: usize) -> Vec<usize> {
    let mut grid = Vec::new();
    let mut decade = 1usize;
    while decade < num_passages {
        for m in [1, 2, 5] {
            let v = m * decade;
            if v >= k && v < num_passages {
                grid.push(v);
            }
        }
        decade = decade.saturating_mul(10);
    }
    grid.push(num_passages);
    grid
}

/// Fraction of the exhaustive top-`k` found in the centroid-only top-`k'`,
/// averaged over queries, for every `k` and every `k'` in `kprimes(k)`.
pub fn self_recall_curve<T: Scalar>(
    index: &CompressedIndex<T>,
    queries: &[QueryMatrix<T>],
    ks: &[usize],
    kprimes: impl Fn(usize) -> Vec<usize>,
    nprobe: usize,
) -> Result<Vec<SelfRecallPoint>> {
    let n = index.num_passages();
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::InvalidParams(format!("self-recall k={bad} outside [1, {n}]")));
    }
    let grids: Vec<Vec<usize>> = ks.iter().map(|&k| kprimes(k)).collect();
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let max_kp = grids.iter().flatten().copied().max().unwrap_or(0).min(n);
    let mut sums: Vec<Vec<f64>> = grids.iter().map(|g| vec![0.0; g.len()]).collect();
    for q in queries {
        let oracle = exhaustive_search(q, index, max_k.max(1))?;
        let approx = centroid_only_search(q, index, nprobe, max_kp.max(1))?;
        for ((&k, grid), acc) in ks.iter().zip(&grids).zip(sums.iter_mut()) {
            let top: HashSet<_> = oracle.passage_ids.iter().take(k).collect();
            for (&kp, slot) in grid.iter().zip(acc.iter_mut()) {
                let hits = approx.passage_ids.iter().take(kp).filter(|p| top.contains(p)).count();
                *slot += hits as f64 / top.len() as f64;
            }
        }
    }
    let nq = queries.len().max(1) as f64;
    let mut out = Vec::new();
    for ((&k, grid), acc) in ks.iter().zip(&grids).zip(&sums) {
        for (&kprime, &s) in grid.iter().zip(acc) {
            out.push(SelfRecallPoint { k, kprime, recall: s / nq });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CdfPoint {
    pub query: usize,
    pub score: f64,
    pub cdf: f64,
}

/// Per query: every centroid's maximum score over the query tokens, sorted
/// ascending, at empirical CDF height `(j + 1) / K`.
pub fn centroid_cdf<T: Scalar>(index: &CompressedIndex<T>, queries: &[QueryMatrix<T>]) -> Result<Vec<CdfPoint>> {
    let k = index.num_centroids();
    let mut out = Vec::with_capacity(queries.len() * k);
    for (qi, q) in queries.iter().enumerate() {
        crate::model::validate_query(q, index.dim())?;
        let table = compute_centroid_scores(q, index.centroids())?;
        let mut maxes: Vec<f64> = table.per_centroid_max().iter().map(|m| m.as_f64()).collect();
        maxes.sort_by(f64::total_cmp);
        out.extend(maxes.into_iter().enumerate().map(|(j, score)| CdfPoint {
            query: qi,
            score,
            cdf: (j + 1) as f64 / k as f64,
        }));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub trials: usize,
    pub num_queries: usize,
    pub filtered: bool,
    /// Field-wise minimum over trials of the per-query average.
    pub latency: LatencyBreakdown,
    /// Per-trial average end-to-end latency.
    pub trial_totals: Vec<f64>,
    pub mean_stage1_candidates: f64,
    pub mean_decompressed_passages: f64,
    pub max_decompressed_passages: usize,
}

/// Runs every query `trials` times through the full pipeline (or the
/// unfiltered baseline) and reports the minimum of per-trial averages.
pub fn bench<T: Scalar>(
    index: &CompressedIndex<T>,
    queries: &[QueryMatrix<T>],
    params: &SearchParams,
    trials: usize,
    filtered: bool,
) -> Result<BenchReport> {
    if trials == 0 || queries.is_empty() {
        return Err(Error::InvalidParams("bench needs at least one trial and one query".into()));
    }
    let nq = queries.len() as f64;
    let mut best: Option<LatencyBreakdown> = None;
    let mut trial_totals = Vec::with_capacity(trials);
    let (mut stage1, mut decompressed, mut max_dec) = (0usize, 0usize, 0usize);
    for trial in 0..trials {
        let mut sum = LatencyBreakdown::default();
        for q in queries {
            let out = if filtered {
                search(q, index, params)?
            } else {
                search_unfiltered(q, index, params)?
            };
            sum.accumulate(&out.trace.latency);
            if trial == 0 {
                stage1 += out.trace.stage1_candidates;
                decompressed += out.trace.decompressed_passages;
                max_dec = max_dec.max(out.trace.decompressed_passages);
            }
        }
        let avg = sum.scaled(1.0 / nq);
        trial_totals.push(avg.total);
        best = Some(match best {
            Some(b) => b.min(&avg),
            None => avg,
        });
    }
    Ok(BenchReport {
        trials,
        num_queries: queries.len(),
        filtered,
        latency: best.unwrap(),
        trial_totals,
        mean_stage1_candidates: stage1 as f64 / nq,
        mean_decompressed_passages: decompressed as f64 / nq,
        max_decompressed_passages: max_dec,
    })
}
