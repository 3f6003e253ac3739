//! Shared domain types: dense embedding matrices, the token corpus, centroids,
//! the passage-level inverted list, search parameters and candidate sets.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::scalar::{l2_norm, Scalar};

pub type PassageId = u32;
pub type CentroidId = u32;

/// Maximum deviation of an input row's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("matrix dimension must be positive".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::LengthMismatch(format!(
                "{} values for a {rows}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Index of the first row whose norm is off by more than `tol`, with its norm.
    pub fn first_unnormalized_row(&self, tol: f64) -> Option<(usize, f64)> {
        first_unnormalized(&self.data, self.dim, tol)
    }
}

pub(crate) fn first_unnormalized<T: Scalar>(
    data: &[T],
    dim: usize,
    tol: f64,
) -> Option<(usize, f64)> {
    data.chunks_exact(dim).enumerate().find_map(|(i, row)| {
        let norm = l2_norm(row).as_f64();
        ((norm - 1.0).abs() > tol || norm.is_nan()).then_some((i, norm))
    })
}

/// Token embeddings of one query, `|Q| x d`.
///
/// Construction checks shape only; [`validate_query`] checks normalization and
/// the dimension against an index, and every search entry point calls it.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryMatrix<T>(Matrix<T>);

impl<T: Scalar> QueryMatrix<T> {
    pub fn new(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::InvalidConfig("query must have at least one token".into()));
        }
        Matrix::new(rows, dim, data).map(Self)
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig("query must have at least one token".into()));
        }
        Matrix::from_rows(rows).map(Self)
    }
}

impl<T> Deref for QueryMatrix<T> {
    type Target = Matrix<T>;
    fn deref(&self) -> &Matrix<T> {
        &self.0
    }
}

/// Succeeds iff the query dimension equals `index_dim` and every row has unit
/// L2 norm within [`NORM_TOLERANCE`].
pub fn validate_query<T: Scalar>(q: &QueryMatrix<T>, index_dim: usize) -> Result<()> {
    if q.dim() != index_dim {
        return Err(Error::DimensionMismatch {
            expected: index_dim,
            found: q.dim(),
        });
    }
    match q.first_unnormalized_row(NORM_TOLERANCE) {
        Some((row, norm)) => Err(Error::NotNormalized { row, norm }),
        None => Ok(()),
    }
}

/// All token embeddings of a corpus, packed in passage order.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEmbeddings<T> {
    dim: usize,
    doclens: Vec<u32>,
    offsets: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> CorpusEmbeddings<T> {
    /// Validates lengths and normalization. Zero-length passages are rejected.
    pub fn new(dim: usize, doclens: Vec<u32>, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        if doclens.len() > u32::MAX as usize {
            return Err(Error::TooManyPassages(doclens.len()));
        }
        if let Some(p) = doclens.iter().position(|&l| l == 0) {
            return Err(Error::EmptyPassageRange { passage: p });
        }
        let offsets = prefix_offsets(&doclens);
        let total = *offsets.last().unwrap_or(&0);
        if total * dim != data.len() {
            return Err(Error::LengthMismatch(format!(
                "doclens sum to {total} tokens but data holds {} rows of dim {dim}",
                data.len() as f64 / dim as f64
            )));
        }
        if let Some((row, norm)) = first_unnormalized(&data, dim, NORM_TOLERANCE) {
            return Err(Error::NotNormalized { row, norm });
        }
        Ok(Self {
            dim,
            doclens,
            offsets,
            data,
        })
    }

    /// Builds a corpus from per-passage token rows.
    pub fn from_passages<P, R>(dim: usize, passages: &[P]) -> Result<Self>
    where
        P: AsRef<[R]>,
        R: AsRef<[T]>,
    {
        let mut doclens = Vec::with_capacity(passages.len());
        let mut data = Vec::new();
        for p in passages {
            let p = p.as_ref();
            doclens.push(u32::try_from(p.len()).map_err(|_| Error::TooManyPassages(p.len()))?);
            for r in p {
                let r = r.as_ref();
                if r.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: r.len(),
                    });
                }
                data.extend_from_slice(r);
            }
        }
        Self::new(dim, doclens, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn num_passages(&self) -> usize {
        self.doclens.len()
    }

    #[inline]
    pub fn num_embeddings(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn doclens(&self) -> &[u32] {
        &self.doclens
    }

    /// Prefix sums of `doclens`, length `num_passages + 1`.
    #[inline]
    pub fn passage_offsets(&self) -> &[usize] {
        &self.offsets
    }

    #[inline]
    pub fn token(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Token rows of passage `p`, packed row-major.
    #[inline]
    pub fn passage(&self, p: usize) -> &[T] {
        &self.data[self.offsets[p] * self.dim..self.offsets[p + 1] * self.dim]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn iter_tokens(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim)
    }
}

/// Prefix sums of a length array: `out[0] = 0`, `out[i+1] = out[i] + lens[i]`.
pub fn prefix_offsets(lens: &[u32]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(lens.len() + 1);
    let mut acc = 0usize;
    offsets.push(0);
    for &l in lens {
        acc += l as usize;
        offsets.push(acc);
    }
    offsets
}

/// k-means centroids, one unit-norm row per centroid.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet<T>(Matrix<T>);

impl<T: Scalar> CentroidSet<T> {
    pub fn new(num_centroids: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        Self::from_matrix(Matrix::new(num_centroids, dim, data)?)
    }

    pub fn from_matrix(m: Matrix<T>) -> Result<Self> {
        if m.rows() == 0 {
            return Err(Error::InvalidConfig("at least one centroid is required".into()));
        }
        if let Some((row, norm)) = m.first_unnormalized_row(NORM_TOLERANCE) {
            return Err(Error::NotNormalized { row, norm });
        }
        Ok(Self(m))
    }

    #[inline]
    pub fn num_centroids(&self) -> usize {
        self.0.rows()
    }
}

impl<T> Deref for CentroidSet<T> {
    type Target = Matrix<T>;
    fn deref(&self) -> &Matrix<T> {
        &self.0
    }
}

/// One compressed token: centroid ID plus packed residual bucket indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompressedVector<'a> {
    pub centroid_id: CentroidId,
    pub residual: &'a [u8],
}

/// Map from centroid to the sorted, deduplicated IDs of passages that own at
/// least one token assigned to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvertedList {
    offsets: Vec<u64>,
    postings: Vec<PassageId>,
}

impl InvertedList {
    /// Assembles a list from raw parts, checking every structural invariant.
    pub fn from_parts(
        offsets: Vec<u64>,
        postings: Vec<PassageId>,
        num_passages: usize,
    ) -> Result<Self> {
        if offsets.len() < 2 {
            return Err(Error::InvariantViolation(
                "inverted list offsets need K+1 >= 2 entries".into(),
            ));
        }
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvariantViolation(
                "inverted list offsets are not monotone from 0".into(),
            ));
        }
        if *offsets.last().unwrap() != postings.len() as u64 {
            return Err(Error::InvariantViolation(
                "last inverted list offset differs from postings length".into(),
            ));
        }
        let ivf = Self { offsets, postings };
        for c in 0..ivf.num_centroids() {
            let list = ivf.postings(c);
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvariantViolation(format!(
                    "postings of centroid {c} are not strictly increasing"
                )));
            }
            if list.last().is_some_and(|&p| p as usize >= num_passages) {
                return Err(Error::InvariantViolation(format!(
                    "postings of centroid {c} reference a passage >= {num_passages}"
                )));
            }
        }
        Ok(ivf)
    }

    #[inline]
    pub fn num_centroids(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn postings(&self, centroid: usize) -> &[PassageId] {
        &self.postings[self.offsets[centroid] as usize..self.offsets[centroid + 1] as usize]
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn all_postings(&self) -> &[PassageId] {
        &self.postings
    }
}

/// Stage widths and thresholds for one search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchParams {
    /// Final result depth.
    pub k: usize,
    /// Centroids probed per query token during candidate generation.
    pub nprobe: usize,
    /// Centroid pruning threshold in cosine units.
    pub t_cs: f64,
    /// Width of the pruned centroid-interaction stage output.
    pub ndocs: usize,
}

impl SearchParams {
    /// Default stage widths for a result depth. Depths between the three
    /// reference settings use the next larger one; `ndocs` never drops below `k`.
    pub fn for_k(k: usize) -> Self {
        let (nprobe, t_cs, ndocs) = if k <= 10 {
            (1, 0.5, 256)
        } else if k <= 100 {
            (2, 0.45, 1024)
        } else {
            (4, 0.4, 4096)
        };
        Self {
            k,
            nprobe,
            t_cs,
            ndocs: ndocs.max(k),
        }
    }

    pub fn validate(&self, num_centroids: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParams("k must be >= 1".into()));
        }
        if self.nprobe == 0 || self.nprobe > num_centroids {
            return Err(Error::InvalidParams(format!(
                "nprobe must lie in [1, {num_centroids}], got {}",
                self.nprobe
            )));
        }
        if self.ndocs < self.k {
            return Err(Error::InvalidParams(format!(
                "ndocs ({}) must be >= k ({})",
                self.ndocs, self.k
            )));
        }
        if !(-1.0..=1.0).contains(&self.t_cs) {
            return Err(Error::InvalidParams(format!(
                "t_cs must lie in [-1, 1], got {}",
                self.t_cs
            )));
        }
        Ok(())
    }

    /// Number of passages the centroid-interaction stage hands to exact scoring.
    pub fn stage3_width(&self) -> usize {
        self.ndocs.div_ceil(4).max(self.k)
    }
}

/// Passage IDs surviving a stage, optionally with their scores.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CandidateSet<T> {
    pub passage_ids: Vec<PassageId>,
    pub scores: Option<Vec<T>>,
}

impl<T: Scalar> CandidateSet<T> {
    pub fn unscored(passage_ids: Vec<PassageId>) -> Self {
        Self {
            passage_ids,
            scores: None,
        }
    }

    pub fn scored(passage_ids: Vec<PassageId>, scores: Vec<T>) -> Self {
        assert_eq!(passage_ids.len(), scores.len(), "ids and scores must align");
        Self {
            passage_ids,
            scores: Some(scores),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.passage_ids.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.passage_ids.is_empty()
    }

    /// `(id, score)` pairs; empty if the set carries no scores.
    pub fn iter_scored(&self) -> impl Iterator<Item = (PassageId, T)> + '_ {
        let scores = self.scores.as_deref().unwrap_or(&[]);
        self.passage_ids.iter().copied().zip(scores.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_query_identity_rows() {
        let q = QueryMatrix::from_rows(&[[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap();
        validate_query(&q, 4).unwrap();
    }

    #[test]
    fn validate_query_rejects_norm_two() {
        let q = QueryMatrix::from_rows(&[[2.0f32, 0.0, 0.0, 0.0]]).unwrap();
        match validate_query(&q, 4) {
            Err(Error::NotNormalized { row: 0, norm }) => assert_eq!(norm, 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_query_rejects_dim() {
        let q = QueryMatrix::from_rows(&[[1.0f64, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            validate_query(&q, 4),
            Err(Error::DimensionMismatch {
                expected: 4,
                found: 3
            })
        ));
    }

    #[test]
    fn validate_query_names_offending_row() {
        let q = QueryMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [0.5, 0.5]]).unwrap();
        assert!(matches!(validate_query(&q, 2), Err(Error::NotNormalized { row: 2, .. })));
    }

    #[test]
    fn corpus_offsets_are_prefix_sums() {
        let e = [1.0f32, 0.0];
        let c = CorpusEmbeddings::from_passages(2, &[vec![e, e], vec![e], vec![e, e, e]]).unwrap();
        assert_eq!(c.passage_offsets(), &[0, 2, 3, 6]);
        assert_eq!(c.num_embeddings(), 6);
        for p in 0..c.num_passages() {
            let o = c.passage_offsets();
            assert_eq!(o[p + 1] - o[p], c.doclens()[p] as usize);
        }
    }

    #[test]
    fn corpus_rejects_bad_lengths_and_norms() {
        assert!(matches!(
            CorpusEmbeddings::new(2, vec![2], vec![1.0f32, 0.0]),
            Err(Error::LengthMismatch(_))
        ));
        assert!(matches!(
            CorpusEmbeddings::new(2, vec![1], vec![1.0f32, 1.0]),
            Err(Error::NotNormalized { row: 0, .. })
        ));
        assert!(matches!(
            CorpusEmbeddings::new(2, vec![1, 0], vec![1.0f32, 0.0]),
            Err(Error::EmptyPassageRange { passage: 1 })
        ));
    }

    #[test]
    fn inverted_list_checks_invariants() {
        assert!(InvertedList::from_parts(vec![0, 2, 3], vec![0, 1, 1], 2).is_ok());
        assert!(InvertedList::from_parts(vec![0, 2, 3], vec![1, 1, 1], 2).is_err());
        assert!(InvertedList::from_parts(vec![0, 2, 3], vec![0, 1, 2], 2).is_err());
        assert!(InvertedList::from_parts(vec![0, 3, 2], vec![0, 1, 1], 2).is_err());
        assert!(InvertedList::from_parts(vec![0], vec![], 2).is_err());
    }

    #[test]
    fn search_params_validation() {
        let p = SearchParams::for_k(10);
        assert_eq!((p.nprobe, p.ndocs), (1, 256));
        p.validate(4).unwrap();
        assert!(SearchParams { nprobe: 5, ..p }.validate(4).is_err());
        assert!(SearchParams { ndocs: 5, ..p }.validate(4).is_err());
        assert!(SearchParams { t_cs: 1.5, ..p }.validate(4).is_err());
        assert!(SearchParams { k: 0, ..p }.validate(4).is_err());
        assert_eq!(SearchParams { ndocs: 10, k: 1, ..p }.stage3_width(), 3);
        assert_eq!(SearchParams { ndocs: 12, k: 10, ..p }.stage3_width(), 10);
    }
}
