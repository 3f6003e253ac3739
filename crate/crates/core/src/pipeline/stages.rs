use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::index::CompressedIndex;
use crate::maxsim::{maxsim_embeddings_into, segment_max_sum, RaggedRows};
use crate::model::{CandidateSet, CentroidSet, InvertedList, PassageId, QueryMatrix};
use crate::scalar::{dot, Scalar};

/// Query-centroid similarities `S = C . Q^T`, stored row-major `K x |Q|`.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidScoreTable<T> {
    qlen: usize,
    scores: Vec<T>,
    per_centroid_max: Vec<T>,
}

impl<T: Scalar> CentroidScoreTable<T> {
    #[inline]
    pub fn num_centroids(&self) -> usize {
        self.per_centroid_max.len()
    }

    #[inline]
    pub fn query_len(&self) -> usize {
        self.qlen
    }

    /// Similarities of centroid `c` to every query token.
    #[inline]
    pub fn row(&self, c: usize) -> &[T] {
        &self.scores[c * self.qlen..(c + 1) * self.qlen]
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize) -> T {
        self.scores[c * self.qlen + i]
    }

    /// `max_i S[c][i]` for every centroid.
    pub fn per_centroid_max(&self) -> &[T] {
        &self.per_centroid_max
    }
}

pub fn compute_centroid_scores<T: Scalar>(
    q: &QueryMatrix<T>,
    centroids: &CentroidSet<T>,
) -> Result<CentroidScoreTable<T>> {
    if q.dim() != centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dim(),
            found: q.dim(),
        });
    }
    let qlen = q.rows();
    let k = centroids.num_centroids();
    let mut scores = vec![T::zero(); k * qlen];
    let mut per_centroid_max = vec![T::zero(); k];
    scores
        .par_chunks_mut(qlen)
        .zip(per_centroid_max.par_iter_mut())
        .enumerate()
        .for_each(|(c, (row, max))| {
            let centroid = centroids.row(c);
            let mut m = T::neg_infinity();
            for (s, qi) in row.iter_mut().zip(q.iter_rows()) {
                *s = dot(centroid, qi);
                if *s > m {
                    m = *s;
                }
            }
            *max = m;
        });
    Ok(CentroidScoreTable {
        qlen,
        scores,
        per_centroid_max,
    })
}

/// Orders by score descending, then passage ID ascending.
#[inline]
fn rank_order<T: Scalar>(a: &(PassageId, T), b: &(PassageId, T)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Union of the postings of the `nprobe` best centroids of every query token
/// (lower centroid index wins ties). IDs come back sorted ascending.
pub fn generate_candidates<T: Scalar>(
    table: &CentroidScoreTable<T>,
    ivf: &InvertedList,
    nprobe: usize,
) -> CandidateSet<T> {
    let k = table.num_centroids();
    let nprobe = nprobe.clamp(1, k);
    let mut probe = vec![false; k];
    let mut order: Vec<u32> = (0..k as u32).collect();
    for i in 0..table.query_len() {
        let by_score = |a: &u32, b: &u32| {
            table
                .get(*b as usize, i)
                .partial_cmp(&table.get(*a as usize, i))
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        if nprobe < k {
            order.select_nth_unstable_by(nprobe - 1, by_score);
        }
        for &c in &order[..nprobe] {
            probe[c as usize] = true;
        }
    }
    let mut ids = Vec::new();
    for (c, _) in probe.iter().enumerate().filter(|(_, &p)| p) {
        ids.extend_from_slice(ivf.postings(c));
    }
    ids.sort_unstable();
    ids.dedup();
    CandidateSet::unscored(ids)
}

/// `mask[c] = max_i S[c][i] >= t_cs`.
pub fn prune_centroids<T: Scalar>(table: &CentroidScoreTable<T>, t_cs: T) -> Vec<bool> {
    table.per_centroid_max().iter().map(|&m| m >= t_cs).collect()
}

/// Centroid score rows of a candidate set's tokens, gathered lazily from the
/// table through each token's centroid code.
struct CentroidRows<'a, T> {
    table: &'a CentroidScoreTable<T>,
    codes: &'a [u32],
    offsets: &'a [usize],
    ids: &'a [PassageId],
    mask: Option<&'a [bool]>,
}

impl<T: Scalar> RaggedRows<T> for CentroidRows<'_, T> {
    fn num_passages(&self) -> usize {
        self.ids.len()
    }

    fn width(&self) -> usize {
        self.table.query_len()
    }

    #[inline]
    fn for_each_row<F: FnMut(&[T])>(&self, p: usize, mut f: F) {
        let pid = self.ids[p] as usize;
        for &c in &self.codes[self.offsets[pid]..self.offsets[pid + 1]] {
            if self.mask.is_none_or(|m| m[c as usize]) {
                f(self.table.row(c as usize));
            }
        }
    }
}

/// Approximate late-interaction scores with every token replaced by its
/// centroid. With a mask, tokens of masked-out centroids are skipped; a
/// passage left with no tokens scores zero. Returns the scored set and the
/// number of score rows visited.
pub fn centroid_interaction<T: Scalar>(
    candidates: &CandidateSet<T>,
    codes: &[u32],
    passage_offsets: &[usize],
    table: &CentroidScoreTable<T>,
    mask: Option<&[bool]>,
) -> (CandidateSet<T>, usize) {
    let rows = CentroidRows {
        table,
        codes,
        offsets: passage_offsets,
        ids: &candidates.passage_ids,
        mask,
    };
    let mut scores = vec![T::zero(); candidates.len()];
    let gathered = segment_max_sum(&rows, &mut scores);
    (
        CandidateSet::scored(candidates.passage_ids.clone(), scores),
        gathered,
    )
}

/// The `n` best of a scored set ordered by (score desc, ID asc).
pub fn select_top<T: Scalar>(scored: CandidateSet<T>, n: usize) -> CandidateSet<T> {
    let mut pairs: Vec<(PassageId, T)> = scored.iter_scored().collect();
    debug_assert_eq!(pairs.len(), scored.len(), "select_top needs scores");
    let n = n.max(1);
    if n < pairs.len() {
        pairs.select_nth_unstable_by(n - 1, rank_order);
        pairs.truncate(n);
    }
    pairs.sort_unstable_by(rank_order);
    let (ids, scores) = pairs.into_iter().unzip();
    CandidateSet::scored(ids, scores)
}

/// Work and wall time of exact re-ranking, split into its three phases.
#[derive(Clone, Copy, Debug, Default)]
pub struct RankTimings {
    pub passages: usize,
    pub tokens: usize,
    pub lookup_ms: f64,
    pub decompression_ms: f64,
    pub scoring_ms: f64,
}

/// Decompresses only the candidate passages, scores them exactly and returns
/// the top `k` by (score desc, ID asc).
pub fn rank_final<T: Scalar>(
    candidates: &CandidateSet<T>,
    index: &CompressedIndex<T>,
    q: &QueryMatrix<T>,
    k: usize,
) -> Result<CandidateSet<T>> {
    rank_final_timed(candidates, index, q, k).map(|(r, _)| r)
}

pub fn rank_final_timed<T: Scalar>(
    candidates: &CandidateSet<T>,
    index: &CompressedIndex<T>,
    q: &QueryMatrix<T>,
    k: usize,
) -> Result<(CandidateSet<T>, RankTimings)> {
    if q.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: q.dim(),
        });
    }
    if let Some(&bad) = candidates
        .passage_ids
        .iter()
        .find(|&&p| p as usize >= index.num_passages())
    {
        return Err(Error::InvalidParams(format!("candidate passage {bad} out of range")));
    }
    let dim = index.dim();
    let rlen = index.residual_len();
    let ids = &candidates.passage_ids;
    let mut timings = RankTimings {
        passages: ids.len(),
        ..Default::default()
    };

    // Lookup: gather codes and packed residuals of the candidates.
    let t = Instant::now();
    let mut offsets = Vec::with_capacity(ids.len() + 1);
    offsets.push(0usize);
    for &p in ids {
        offsets.push(offsets.last().unwrap() + index.doclens()[p as usize] as usize);
    }
    let tokens = *offsets.last().unwrap();
    timings.tokens = tokens;
    let mut codes = vec![0u32; tokens];
    let mut residuals = vec![0u8; tokens * rlen];
    split_by_offsets(&mut codes, &offsets, 1)
        .into_par_iter()
        .zip(split_by_offsets(&mut residuals, &offsets, rlen))
        .zip(ids.par_iter())
        .for_each(|((c, r), &p)| {
            c.copy_from_slice(index.passage_codes(p));
            r.copy_from_slice(index.passage_residuals(p));
        });
    timings.lookup_ms = t.elapsed().as_secs_f64() * 1e3;

    // Decompression, parallel across passages.
    let t = Instant::now();
    let mut embeddings = vec![T::zero(); tokens * dim];
    let decoder = index.decoder();
    let centroids = index.centroids();
    split_by_offsets(&mut embeddings, &offsets, dim)
        .into_par_iter()
        .enumerate()
        .for_each(|(j, out)| {
            let (lo, hi) = (offsets[j], offsets[j + 1]);
            for (t, dst) in (lo..hi).zip(out.chunks_exact_mut(dim)) {
                decoder.decode_into(
                    centroids.row(codes[t] as usize),
                    &residuals[t * rlen..(t + 1) * rlen],
                    dst,
                );
            }
        });
    timings.decompression_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let mut scores = vec![T::zero(); ids.len()];
    if !ids.is_empty() {
        maxsim_embeddings_into(q, &embeddings, &offsets, &mut scores)?;
    }
    let ranked = select_top(CandidateSet::scored(ids.clone(), scores), k);
    timings.scoring_ms = t.elapsed().as_secs_f64() * 1e3;
    Ok((ranked, timings))
}

/// Splits `buf` into consecutive mutable chunks of `(offsets[j+1] - offsets[j]) * stride`.
fn split_by_offsets<'a, U>(mut buf: &'a mut [U], offsets: &[usize], stride: usize) -> Vec<&'a mut [U]> {
    let mut out = Vec::with_capacity(offsets.len().saturating_sub(1));
    for w in offsets.windows(2) {
        let (head, tail) = buf.split_at_mut((w[1] - w[0]) * stride);
        out.push(head);
        buf = tail;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indexer::build_inverted_list;

    fn table(rows: &[&[f64]]) -> CentroidScoreTable<f64> {
        let qlen = rows[0].len();
        let scores: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let per_centroid_max = rows
            .iter()
            .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        CentroidScoreTable {
            qlen,
            scores,
            per_centroid_max,
        }
    }

    #[test]
    fn centroid_scores_identity() {
        let c = CentroidSet::new(2, 2, vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let q = QueryMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let t = compute_centroid_scores(&q, &c).unwrap();
        assert_eq!(t.row(0), &[1.0]);
        assert_eq!(t.row(1), &[0.0]);
        assert_eq!(t.per_centroid_max(), &[1.0, 0.0]);

        let q2 = QueryMatrix::from_rows(&[[0.6f32, 0.8], [0.6, 0.8]]).unwrap();
        let t2 = compute_centroid_scores(&q2, &c).unwrap();
        for r in 0..2 {
            assert_eq!(t2.row(r)[0], t2.row(r)[1]);
        }
        let q3 = QueryMatrix::from_rows(&[[1.0f32, 0.0, 0.0]]).unwrap();
        assert!(compute_centroid_scores(&q3, &c).is_err());
    }

    #[test]
    fn candidates_full_probe_and_single() {
        // Passages 0..4; passage 4 uses only centroid 2.
        let codes = [0, 1, 1, 0, 2, 3, 2];
        let doclens = [2, 1, 1, 2, 1];
        let ivf = build_inverted_list(&codes, &doclens, 4);
        let t = table(&[&[0.9], &[0.1], &[0.5], &[-0.2]]);
        assert_eq!(generate_candidates(&t, &ivf, 4).passage_ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(generate_candidates(&t, &ivf, 1).passage_ids, vec![0, 2]);
        // Tie between centroids 1 and 2 at nprobe 2 goes to... centroid 0 then 2.
        assert_eq!(generate_candidates(&t, &ivf, 2).passage_ids, vec![0, 2, 3, 4]);
    }

    #[test]
    fn candidate_ties_prefer_lower_centroid() {
        let codes = [0, 1];
        let ivf = build_inverted_list(&codes, &[1, 1], 2);
        let t = table(&[&[0.5], &[0.5]]);
        assert_eq!(generate_candidates(&t, &ivf, 1).passage_ids, vec![0]);
    }

    #[test]
    fn pruning_examples() {
        let t = table(&[&[0.9, 0.1], &[0.5, 0.2]]);
        assert_eq!(prune_centroids(&t, 0.6), vec![true, false]);
        assert_eq!(prune_centroids(&t, -1.0), vec![true, true]);
        assert_eq!(prune_centroids(&t, 0.5), vec![true, true]);
    }

    #[test]
    fn interaction_examples() {
        let t = table(&[&[1.0, 1.0], &[0.2, 0.1]]);
        let cands = CandidateSet::<f64>::unscored(vec![0, 1]);
        // Passage 0: two tokens on centroid 0; passage 1: tokens on 0 and 1.
        let codes = [0, 0, 0, 1];
        let offsets = [0, 2, 4];
        let (s, rows) = centroid_interaction(&cands, &codes, &offsets, &t, None);
        assert_eq!(s.scores.unwrap(), vec![2.0, 2.0]);
        assert_eq!(rows, 4);

        // Masking centroid 1 drops a dominated row: score unchanged.
        let mask = [true, false];
        let (s, rows) = centroid_interaction(&cands, &codes, &offsets, &t, Some(&mask));
        assert_eq!(s.scores.unwrap(), vec![2.0, 2.0]);
        assert_eq!(rows, 3);

        // Everything masked: zero.
        let mask = [false, false];
        let (s, rows) = centroid_interaction(&cands, &codes, &offsets, &t, Some(&mask));
        assert_eq!(s.scores.unwrap(), vec![0.0, 0.0]);
        assert_eq!(rows, 0);
    }

    #[test]
    fn select_top_ties_and_depth() {
        let s = CandidateSet::scored(vec![1, 0], vec![0.5f32, 0.5]);
        assert_eq!(select_top(s.clone(), 1).passage_ids, vec![0]);
        let all = select_top(s, 10);
        assert_eq!(all.passage_ids, vec![0, 1]);
    }

    #[test]
    fn select_top_matches_sort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(1..60);
            let ids: Vec<u32> = (0..n).map(|i| i * 3 + 1).collect();
            // Coarse scores force plenty of ties.
            let scores: Vec<f32> = (0..n).map(|_| rng.random_range(0..5) as f32 / 4.0).collect();
            let depth = rng.random_range(1..70);
            let got = select_top(CandidateSet::scored(ids.clone(), scores.clone()), depth as usize);
            let mut oracle: Vec<(u32, f32)> = ids.into_iter().zip(scores).collect();
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            oracle.truncate(depth as usize);
            assert_eq!(got.iter_scored().collect::<Vec<_>>(), oracle);
        }
    }
}
