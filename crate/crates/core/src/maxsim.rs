//! Padding-free MaxSim over ragged, packed layouts.
//!
//! Passages are contiguous row ranges of one packed buffer. Each worker keeps a
//! single length-`|Q|` running-max accumulator and reuses it for every passage it
//! scores, so auxiliary memory is `O(|Q|)` regardless of passage length. Outputs
//! go to pre-sized slots, so results do not depend on scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::QueryMatrix;
use crate::scalar::{dot, Scalar};

/// Ragged collection of score rows, each `width` wide, grouped by passage.
pub trait RaggedRows<T>: Sync {
    fn num_passages(&self) -> usize;
    fn width(&self) -> usize;
    /// Calls `f` on every score row of passage `p`.
    fn for_each_row<F: FnMut(&[T])>(&self, p: usize, f: F);
}

/// `T x |Q|` score rows of tokens from many passages, concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedScores<T> {
    width: usize,
    data: Vec<T>,
    offsets: Vec<usize>,
}

impl<T: Scalar> PackedScores<T> {
    /// `offsets` has one entry per passage plus one; passage `p` owns rows
    /// `offsets[p]..offsets[p+1]`.
    pub fn new(width: usize, data: Vec<T>, offsets: Vec<usize>) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidConfig("score rows need at least one query token".into()));
        }
        if data.len() % width != 0 {
            return Err(Error::LengthMismatch(format!(
                "{} scores do not form rows of width {width}",
                data.len()
            )));
        }
        if offsets.first() != Some(&0)
            || offsets.windows(2).any(|w| w[0] > w[1])
            || *offsets.last().unwrap() != data.len() / width
        {
            return Err(Error::InvariantViolation(
                "packed score offsets must rise monotonically from 0 to the row count".into(),
            ));
        }
        Ok(Self {
            width,
            data,
            offsets,
        })
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.width
    }
}

impl<T: Scalar> RaggedRows<T> for PackedScores<T> {
    fn num_passages(&self) -> usize {
        self.offsets.len() - 1
    }

    fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn for_each_row<F: FnMut(&[T])>(&self, p: usize, mut f: F) {
        let (lo, hi) = (self.offsets[p], self.offsets[p + 1]);
        for row in self.data[lo * self.width..hi * self.width].chunks_exact(self.width) {
            f(row);
        }
    }
}

/// Sum of per-column maxima in `acc`; columns never touched count as zero.
#[inline]
fn finish<T: Scalar>(acc: &[T]) -> T {
    let mut total = T::zero();
    for &m in acc {
        if m.is_finite() {
            total += m;
        }
    }
    total
}

/// Scores passage `p` of `src` into a caller-owned accumulator of length
/// `src.width()`. Returns the score and the number of rows visited.
#[inline]
pub fn score_passage<T: Scalar, S: RaggedRows<T>>(src: &S, p: usize, acc: &mut [T]) -> (T, usize) {
    acc.fill(T::neg_infinity());
    let mut rows = 0;
    src.for_each_row(p, |row| {
        rows += 1;
        for (a, &s) in acc.iter_mut().zip(row) {
            if s > *a {
                *a = s;
            }
        }
    });
    (finish(acc), rows)
}

/// Segmented max-then-sum over every passage of `src`, in parallel across
/// passages. A passage with no rows scores zero. Returns the total number of
/// rows visited.
pub fn segment_max_sum<T: Scalar, S: RaggedRows<T>>(src: &S, out: &mut [T]) -> usize {
    assert_eq!(out.len(), src.num_passages());
    let width = src.width();
    out.par_iter_mut()
        .enumerate()
        .map_init(
            || vec![T::zero(); width],
            |acc, (p, slot)| {
                let (score, rows) = score_passage(src, p, acc);
                *slot = score;
                rows
            },
        )
        .sum()
}

/// `out[p] = sum_i max_{t in p} scores[t][i]`.
pub fn maxsim_packed<T: Scalar>(scores: &PackedScores<T>) -> Result<Vec<T>> {
    if let Some(p) = scores.offsets.windows(2).position(|w| w[0] == w[1]) {
        return Err(Error::EmptyPassageRange { passage: p });
    }
    let mut out = vec![T::zero(); scores.num_passages()];
    segment_max_sum(scores, &mut out);
    Ok(out)
}

/// Late-interaction score of `q` against each passage of a packed embedding
/// buffer: `sum_i max_j q_i . d_j`. `offsets` are token offsets, one per
/// passage plus one.
pub fn maxsim_embeddings<T: Scalar>(
    q: &QueryMatrix<T>,
    embeddings: &[T],
    offsets: &[usize],
) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); offsets.len().saturating_sub(1)];
    maxsim_embeddings_into(q, embeddings, offsets, &mut out)?;
    Ok(out)
}

pub fn maxsim_embeddings_into<T: Scalar>(
    q: &QueryMatrix<T>,
    embeddings: &[T],
    offsets: &[usize],
    out: &mut [T],
) -> Result<()> {
    let dim = q.dim();
    if offsets.is_empty() || offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvariantViolation("embedding offsets must rise from 0".into()));
    }
    let tokens = *offsets.last().unwrap();
    if embeddings.len() != tokens * dim {
        return Err(Error::DimensionMismatch {
            expected: tokens * dim,
            found: embeddings.len(),
        });
    }
    if let Some(p) = offsets.windows(2).position(|w| w[0] == w[1]) {
        return Err(Error::EmptyPassageRange { passage: p });
    }
    assert_eq!(out.len(), offsets.len() - 1);
    let qlen = q.rows();
    out.par_iter_mut().enumerate().for_each_init(
        || vec![T::zero(); qlen],
        |acc, (p, slot)| {
            acc.fill(T::neg_infinity());
            let doc = &embeddings[offsets[p] * dim..offsets[p + 1] * dim];
            for d in doc.chunks_exact(dim) {
                for (a, qi) in acc.iter_mut().zip(q.iter_rows()) {
                    let s = dot(qi, d);
                    if s > *a {
                        *a = s;
                    }
                }
            }
            *slot = finish(acc);
        },
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn packed(width: usize, passages: &[Vec<Vec<f64>>]) -> PackedScores<f64> {
        let mut data = Vec::new();
        let mut offsets = vec![0];
        for p in passages {
            for r in p {
                data.extend_from_slice(r);
            }
            offsets.push(offsets.last().unwrap() + p.len());
        }
        PackedScores::new(width, data, offsets).unwrap()
    }

    #[test]
    fn single_token_passage() {
        let s = packed(2, &[vec![vec![0.3, 0.7]]]);
        assert_eq!(maxsim_packed(&s).unwrap(), vec![1.0]);
    }

    #[test]
    fn per_column_maxima() {
        let s = packed(2, &[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]]);
        assert_eq!(maxsim_packed(&s).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn empty_range_is_an_error() {
        let s = PackedScores::new(1, vec![1.0f32], vec![0, 1, 1]).unwrap();
        assert!(matches!(maxsim_packed(&s), Err(Error::EmptyPassageRange { passage: 1 })));
        assert!(PackedScores::new(1, vec![1.0f32], vec![0, 2]).is_err());
    }

    #[test]
    fn embeddings_examples() {
        let q = QueryMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        assert_eq!(maxsim_embeddings(&q, &[1.0, 0.0], &[0, 1]).unwrap(), vec![1.0]);
        let q = QueryMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(maxsim_embeddings(&q, &[1.0, 0.0], &[0, 1]).unwrap(), vec![1.0]);
        assert!(matches!(
            maxsim_embeddings(&q, &[1.0, 0.0, 0.0], &[0, 1]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn ragged() -> impl Strategy<Value = (usize, Vec<Vec<Vec<f64>>>)> {
        (1usize..5).prop_flat_map(|w| {
            let row = prop::collection::vec(-1.0f64..1.0, w);
            let passage = prop::collection::vec(row, 1..6);
            (Just(w), prop::collection::vec(passage, 1..8))
        })
    }

    proptest! {
        #[test]
        fn permuting_tokens_keeps_score((w, mut ps) in ragged(), rot in 0usize..6) {
            let before = maxsim_packed(&packed(w, &ps)).unwrap();
            for p in ps.iter_mut() {
                let n = p.len();
                p.rotate_left(rot % n);
                p.reverse();
            }
            prop_assert_eq!(before, maxsim_packed(&packed(w, &ps)).unwrap());
        }

        #[test]
        fn passage_order_permutes_outputs((w, ps) in ragged()) {
            let fwd = maxsim_packed(&packed(w, &ps)).unwrap();
            let rev: Vec<_> = ps.iter().rev().cloned().collect();
            let mut back = maxsim_packed(&packed(w, &rev)).unwrap();
            back.reverse();
            prop_assert_eq!(fwd, back);
        }

        #[test]
        fn dominated_token_is_inert_dominating_token_raises((w, mut ps) in ragged()) {
            let base = maxsim_packed(&packed(w, &ps)).unwrap()[0];
            let mut colmin = vec![f64::INFINITY; w];
            for r in &ps[0] {
                for (m, &x) in colmin.iter_mut().zip(r) {
                    *m = m.min(x);
                }
            }
            ps[0].push(colmin.iter().map(|x| x - 0.5).collect());
            prop_assert_eq!(maxsim_packed(&packed(w, &ps)).unwrap()[0], base);
            ps[0].push(vec![2.0; w]);
            prop_assert!(maxsim_packed(&packed(w, &ps)).unwrap()[0] > base);
        }
    }
}
