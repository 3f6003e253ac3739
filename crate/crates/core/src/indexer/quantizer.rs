//! Scalar residual quantizer: `2^b` buckets over the pooled distribution of
//! residual components, shared by every dimension.
//!
//! Cutoffs are empirical quantiles at `i / 2^b` using the averaged nearest-rank
//! convention: with `n` sorted values and `h = q * n`, the quantile is
//! `x[ceil(h) - 1]` when `h` is fractional and `(x[h-1] + x[h]) / 2` when `h`
//! is a whole number. A value equal to a cutoff falls in the upper bucket.
//! Each bucket's weight is the mean of the training values it received; an
//! empty bucket takes the midpoint of its (finite) bounds.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CentroidSet, CorpusEmbeddings};
use crate::scalar::Scalar;

/// Cap on pooled residual components used for training.
pub const MAX_QUANTIZER_SAMPLES: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerSpec<T> {
    cutoffs: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> QuantizerSpec<T> {
    pub fn new(cutoffs: Vec<T>, weights: Vec<T>) -> Result<Self> {
        let buckets = weights.len();
        if ![2, 4, 16].contains(&buckets) || cutoffs.len() + 1 != buckets {
            return Err(Error::InvariantViolation(format!(
                "quantizer needs 2^b weights and 2^b - 1 cutoffs, got {} and {}",
                buckets,
                cutoffs.len()
            )));
        }
        if cutoffs.iter().chain(&weights).any(|x| !x.is_finite()) {
            return Err(Error::InvariantViolation("quantizer values must be finite".into()));
        }
        if cutoffs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvariantViolation("bucket cutoffs are not ascending".into()));
        }
        for (i, &w) in weights.iter().enumerate() {
            let lo = if i == 0 { T::neg_infinity() } else { cutoffs[i - 1] };
            let hi = cutoffs.get(i).copied().unwrap_or(T::infinity());
            if w < lo || w > hi {
                return Err(Error::InvariantViolation(format!(
                    "bucket weight {i} ({w}) lies outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { cutoffs, weights })
    }

    pub fn nbits(&self) -> u8 {
        self.weights.len().trailing_zeros() as u8
    }

    pub fn bucket_cutoffs(&self) -> &[T] {
        &self.cutoffs
    }

    pub fn bucket_weights(&self) -> &[T] {
        &self.weights
    }

    /// All cutoffs coincide: every component reconstructs to the same delta.
    pub fn is_degenerate(&self) -> bool {
        self.cutoffs.windows(2).all(|w| w[0] == w[1])
            && self.weights.windows(2).all(|w| w[0] == w[1])
    }

    /// Bucket of one residual component.
    #[inline]
    pub fn bucketize(&self, x: T) -> u8 {
        self.cutoffs.partition_point(|&c| c <= x) as u8
    }

    /// Largest per-component reconstruction error for values in `[min, max]`
    /// (the outer buckets are bounded by the observed range).
    pub fn max_abs_error(&self, min: T, max: T) -> T {
        let mut worst = T::zero();
        for (i, &w) in self.weights.iter().enumerate() {
            let lo = if i == 0 { min } else { self.cutoffs[i - 1] };
            let hi = self.cutoffs.get(i).copied().unwrap_or(max);
            worst = worst.max((w - lo).abs()).max((hi - w).abs());
        }
        worst
    }
}

/// Fits a quantizer from already-pooled residual components.
pub fn fit_quantizer<T: Scalar>(values: &mut [T], nbits: u8) -> Result<QuantizerSpec<T>> {
    crate::codec::check_nbits(nbits)?;
    if values.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("residuals are finite"));
    let n = values.len();
    let m = 1usize << nbits;

    let cutoffs: Vec<T> = (1..m)
        .map(|i| {
            let num = i * n;
            let j = num / m;
            if num % m == 0 {
                (values[j - 1] + values[j]) / T::lit(2.0)
            } else {
                values[j]
            }
        })
        .collect();

    let mut sums = vec![0f64; m];
    let mut counts = vec![0usize; m];
    let mut bucket = 0usize;
    for &v in values.iter() {
        while bucket < m - 1 && cutoffs[bucket] <= v {
            bucket += 1;
        }
        sums[bucket] += v.as_f64();
        counts[bucket] += 1;
    }
    let weights = (0..m)
        .map(|i| {
            let lo = if i == 0 { None } else { Some(cutoffs[i - 1]) };
            let hi = cutoffs.get(i).copied();
            if counts[i] > 0 {
                let mean = T::lit(sums[i] / counts[i] as f64);
                // Clamp guards the f64 -> T rounding at bucket edges.
                let mean = lo.map_or(mean, |lo| mean.max(lo));
                hi.map_or(mean, |hi| mean.min(hi))
            } else {
                match (lo, hi) {
                    (Some(lo), Some(hi)) => (lo + hi) / T::lit(2.0),
                    (Some(b), None) | (None, Some(b)) => b,
                    (None, None) => unreachable!("nbits >= 1 gives at least one cutoff"),
                }
            }
        })
        .collect();
    QuantizerSpec::new(cutoffs, weights)
}

/// Trains the residual quantizer on residual components `v - centroid[code(v)]`
/// pooled across all dimensions, sampling at most [`MAX_QUANTIZER_SAMPLES`].
pub fn train_quantizer<T: Scalar>(
    corpus: &CorpusEmbeddings<T>,
    centroids: &CentroidSet<T>,
    codes: &[u32],
    nbits: u8,
    seed: u64,
) -> Result<QuantizerSpec<T>> {
    let dim = corpus.dim();
    if codes.len() != corpus.num_embeddings() {
        return Err(Error::LengthMismatch(format!(
            "{} codes for {} embeddings",
            codes.len(),
            corpus.num_embeddings()
        )));
    }
    if centroids.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: centroids.dim(),
        });
    }
    let total = codes.len() * dim;
    let component = |idx: usize| {
        let (t, j) = (idx / dim, idx % dim);
        corpus.token(t)[j] - centroids.row(codes[t] as usize)[j]
    };
    let mut values: Vec<T> = if total <= MAX_QUANTIZER_SAMPLES {
        (0..total).map(component).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, total, MAX_QUANTIZER_SAMPLES).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(component).collect()
    };
    fit_quantizer(&mut values, nbits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Brute-force quantile oracle: literal definition over the sorted list.
    fn oracle_quantile(sorted: &[f64], q: f64) -> f64 {
        let h = q * sorted.len() as f64;
        if h.fract() == 0.0 {
            let j = h as usize;
            (sorted[j - 1] + sorted[j]) / 2.0
        } else {
            sorted[h.ceil() as usize - 1]
        }
    }

    #[test]
    fn all_zero_residuals_are_degenerate() {
        let mut v = vec![0.0f32; 64];
        let q = fit_quantizer(&mut v, 2).unwrap();
        assert_eq!(q.bucket_cutoffs(), &[0.0; 3]);
        assert_eq!(q.bucket_weights(), &[0.0; 4]);
        assert!(q.is_degenerate());
    }

    #[test]
    fn uniform_one_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut v: Vec<f64> = (0..100_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = fit_quantizer(&mut v, 1).unwrap();
        assert!(q.bucket_cutoffs()[0].abs() < 0.05);
        assert!((q.bucket_weights()[0] + 0.5).abs() < 0.05);
        assert!((q.bucket_weights()[1] - 0.5).abs() < 0.05);
    }

    #[test]
    fn two_bit_symmetric_points() {
        let mut v: Vec<f64> = [-3.0, -1.0, 1.0, 3.0].repeat(25);
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = fit_quantizer(&mut v, 2).unwrap();
        let oracle: Vec<f64> = (1..4).map(|i| oracle_quantile(&sorted, i as f64 / 4.0)).collect();
        assert_eq!(oracle, vec![-2.0, 0.0, 2.0]);
        assert_eq!(q.bucket_cutoffs(), oracle.as_slice());
        assert_eq!(q.bucket_weights(), &[-3.0, -1.0, 1.0, 3.0]);
    }

    #[test]
    fn cutoffs_match_quantile_oracle_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 3, 7, 16, 101, 1000] {
            for b in [1u8, 2, 4] {
                let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.2)).collect();
                let mut sorted = v.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = 1usize << b;
                let q = fit_quantizer(&mut v, b).unwrap();
                for i in 1..m {
                    assert_eq!(q.bucket_cutoffs()[i - 1], oracle_quantile(&sorted, i as f64 / m as f64));
                }
                // Weights: brute-force per-bucket means.
                for (bkt, &w) in q.bucket_weights().iter().enumerate() {
                    let members: Vec<f64> =
                        sorted.iter().copied().filter(|&x| q.bucketize(x) as usize == bkt).collect();
                    if !members.is_empty() {
                        let mean = members.iter().sum::<f64>() / members.len() as f64;
                        assert!((w - mean).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bucketize_upper_on_ties() {
        let q = QuantizerSpec::new(vec![-1.0f32, 0.0, 1.0], vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
        assert_eq!(q.bucketize(-5.0), 0);
        assert_eq!(q.bucketize(-1.0), 1);
        assert_eq!(q.bucketize(0.0), 2);
        assert_eq!(q.bucketize(0.99), 2);
        assert_eq!(q.bucketize(1.0), 3);
        assert_eq!(q.max_abs_error(-3.0, 3.0), 1.0);
    }

    #[test]
    fn rejects_malformed_specs() {
        assert!(QuantizerSpec::new(vec![0.0f32], vec![0.0, 0.0, 0.0]).is_err());
        assert!(QuantizerSpec::new(vec![1.0f32, 0.0, 2.0], vec![0.0; 4]).is_err());
        assert!(QuantizerSpec::new(vec![0.0f32], vec![0.5, 1.0]).is_err());
    }
}
