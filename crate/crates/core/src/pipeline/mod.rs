//! Four-stage search: centroid-based candidate generation, pruned centroid
//! interaction, full centroid interaction, and exact re-ranking over
//! decompressed embeddings.

mod stages;
mod trace;

pub use stages::{
    centroid_interaction, compute_centroid_scores, generate_candidates, prune_centroids,
    rank_final, rank_final_timed, select_top, CentroidScoreTable, RankTimings,
};
pub use trace::{LatencyBreakdown, StageTrace};

use std::time::Instant;

use crate::error::Result;
use crate::index::CompressedIndex;
use crate::model::{validate_query, CandidateSet, PassageId, QueryMatrix, SearchParams};
use crate::scalar::Scalar;

/// Ranked results with the per-stage trace that produced them.
#[derive(Clone, Debug)]
pub struct SearchOutput<T> {
    pub results: CandidateSet<T>,
    pub trace: StageTrace,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs the full pipeline for one query.
pub fn search<T: Scalar>(
    q: &QueryMatrix<T>,
    index: &CompressedIndex<T>,
    params: &SearchParams,
) -> Result<SearchOutput<T>> {
    run(q, index, params, true)
}

/// Stage 1 followed directly by exact scoring of every candidate: no centroid
/// interaction, no pruning. The baseline the filtering stages are measured
/// against.
pub fn search_unfiltered<T: Scalar>(
    q: &QueryMatrix<T>,
    index: &CompressedIndex<T>,
    params: &SearchParams,
) -> Result<SearchOutput<T>> {
    run(q, index, params, false)
}

fn run<T: Scalar>(
    q: &QueryMatrix<T>,
    index: &CompressedIndex<T>,
    params: &SearchParams,
    filter: bool,
) -> Result<SearchOutput<T>> {
    let start = Instant::now();
    params.validate(index.num_centroids())?;
    validate_query(q, index.dim())?;
    let mut trace = StageTrace::default();

    let t = Instant::now();
    let table = compute_centroid_scores(q, index.centroids())?;
    trace.centroid_score_products += 1;
    let stage1 = generate_candidates(&table, index.ivf(), params.nprobe);
    trace.stage1_candidates = stage1.len();
    trace.latency.candidate_generation = ms(t);

    if stage1.is_empty() {
        trace.latency.total = ms(start);
        return Ok(SearchOutput {
            results: CandidateSet::scored(Vec::new(), Vec::new()),
            trace,
        });
    }

    let to_rank = if filter {
        let t = Instant::now();
        let mask = prune_centroids(&table, T::lit(params.t_cs));
        let (scored, rows) =
            centroid_interaction(&stage1, index.codes(), index.passage_offsets(), &table, Some(&mask));
        trace.rows_gathered_stage2 = rows;
        let stage2 = select_top(scored, params.ndocs);
        trace.stage2_out = stage2.len();

        let (scored, rows) =
            centroid_interaction(&stage2, index.codes(), index.passage_offsets(), &table, None);
        trace.rows_gathered_stage3 = rows;
        let stage3 = select_top(scored, params.stage3_width());
        trace.stage3_out = stage3.len();
        trace.latency.filtering = ms(t);
        stage3
    } else {
        trace.stage2_out = stage1.len();
        trace.stage3_out = stage1.len();
        stage1
    };

    let (results, timings) = rank_final_timed(&to_rank, index, q, params.k)?;
    trace.decompressed_passages = timings.passages;
    trace.decompressed_tokens = timings.tokens;
    trace.latency.lookup = timings.lookup_ms;
    trace.latency.decompression = timings.decompression_ms;
    trace.latency.scoring = timings.scoring_ms;
    trace.result_len = results.len();
    trace.latency.total = ms(start);
    Ok(SearchOutput { results, trace })
}

/// Exact late-interaction ranking of every passage over decompressed
/// embeddings, the reference the approximate stages are compared to.
pub fn exhaustive_search<T: Scalar>(
    q: &QueryMatrix<T>,
    index: &CompressedIndex<T>,
    k: usize,
) -> Result<CandidateSet<T>> {
    validate_query(q, index.dim())?;
    let all = CandidateSet::unscored((0..index.num_passages() as PassageId).collect());
    rank_final(&all, index, q, k)
}

/// Ranking that never touches residuals: Stage-1 candidates at `nprobe`, scored
/// by unpruned centroid interaction, top `depth`.
pub fn centroid_only_search<T: Scalar>(
    q: &QueryMatrix<T>,
    index: &CompressedIndex<T>,
    nprobe: usize,
    depth: usize,
) -> Result<CandidateSet<T>> {
    validate_query(q, index.dim())?;
    SearchParams {
        k: depth.max(1),
        nprobe,
        t_cs: -1.0,
        ndocs: depth.max(1),
    }
    .validate(index.num_centroids())?;
    let table = compute_centroid_scores(q, index.centroids())?;
    let stage1 = generate_candidates(&table, index.ivf(), nprobe);
    if stage1.is_empty() {
        return Ok(CandidateSet::scored(Vec::new(), Vec::new()));
    }
    let (scored, _) =
        centroid_interaction(&stage1, index.codes(), index.passage_offsets(), &table, None);
    Ok(select_top(scored, depth.max(1)))
}
