//! Offline index construction: centroid training, code assignment, residual
//! quantization and the passage-level inverted list.

mod kmeans;
mod quantizer;

pub use kmeans::{kmeans, train_centroids, KMeans};
pub use quantizer::{fit_quantizer, train_quantizer, QuantizerSpec, MAX_QUANTIZER_SAMPLES};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{check_nbits, check_packable, indices_per_byte, pack_into, packed_len};
use crate::error::{Error, Result};
use crate::index::{CompressedIndex, IndexParts};
use crate::model::{CentroidSet, CorpusEmbeddings, InvertedList};
use crate::scalar::Scalar;

/// Upper bound on k-means training rows under the default sample fraction.
pub const KMEANS_SAMPLE_CAP: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct IndexConfig {
    /// Bits per residual component: 1, 2 or 4.
    pub nbits: u8,
    /// Number of centroids; 0 picks [`auto_num_centroids`].
    pub num_centroids: usize,
    pub kmeans_iters: usize,
    /// Fraction of embeddings used to train k-means. `None` means
    /// `min(1, 2^20 / N)`.
    pub sample_fraction: Option<f64>,
    pub rng_seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            nbits: 2,
            num_centroids: 0,
            kmeans_iters: 20,
            sample_fraction: None,
            rng_seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        check_nbits(self.nbits)?;
        if self.kmeans_iters == 0 {
            return Err(Error::InvalidConfig("kmeans_iters must be >= 1".into()));
        }
        if let Some(f) = self.sample_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "sample_fraction must lie in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    pub fn sample_fraction_for(&self, num_embeddings: usize) -> f64 {
        self.sample_fraction
            .unwrap_or_else(|| (KMEANS_SAMPLE_CAP as f64 / num_embeddings as f64).min(1.0))
    }
}

/// Smallest power of two whose square reaches `num_embeddings`, i.e.
/// `2^ceil(log2(sqrt(N)))`, clamped to `[1, N]`.
pub fn auto_num_centroids(num_embeddings: usize) -> usize {
    let n = num_embeddings.max(1);
    let mut k = 1usize;
    while k.saturating_mul(k) < n {
        k *= 2;
    }
    k.min(n)
}

/// Nearest centroid (maximum cosine, lowest index on ties) of every token.
pub fn assign_codes<T: Scalar>(
    corpus: &CorpusEmbeddings<T>,
    centroids: &CentroidSet<T>,
) -> Result<Vec<u32>> {
    if corpus.dim() != centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dim(),
            found: corpus.dim(),
        });
    }
    Ok(kmeans::assign_all(corpus.as_slice(), centroids.as_slice(), corpus.dim())
        .into_iter()
        .map(|(c, _)| c)
        .collect())
}

/// For each centroid, the ascending unique IDs of passages with at least one
/// token coded to it.
pub fn build_inverted_list(codes: &[u32], doclens: &[u32], num_centroids: usize) -> InvertedList {
    let total: usize = doclens.iter().map(|&l| l as usize).sum();
    assert_eq!(total, codes.len(), "doclens must sum to the number of codes");

    // Each passage's distinct codes, in passage order.
    let mut distinct: Vec<u32> = Vec::new();
    let mut bounds = Vec::with_capacity(doclens.len() + 1);
    bounds.push(0);
    let mut start = 0usize;
    let mut scratch = Vec::new();
    for &len in doclens {
        scratch.clear();
        scratch.extend_from_slice(&codes[start..start + len as usize]);
        scratch.sort_unstable();
        scratch.dedup();
        distinct.extend_from_slice(&scratch);
        bounds.push(distinct.len());
        start += len as usize;
    }

    let mut offsets = vec![0u64; num_centroids + 1];
    for &c in &distinct {
        offsets[c as usize + 1] += 1;
    }
    for c in 0..num_centroids {
        offsets[c + 1] += offsets[c];
    }
    let mut fill: Vec<u64> = offsets[..num_centroids].to_vec();
    let mut postings = vec![0u32; distinct.len()];
    for p in 0..doclens.len() {
        for &c in &distinct[bounds[p]..bounds[p + 1]] {
            postings[fill[c as usize] as usize] = p as u32;
            fill[c as usize] += 1;
        }
    }
    InvertedList::from_parts(offsets, postings, doclens.len())
        .expect("construction yields a well-formed inverted list")
}

/// Quantizes and packs every token's residual against its assigned centroid.
pub fn encode_residuals<T: Scalar>(
    corpus: &CorpusEmbeddings<T>,
    centroids: &CentroidSet<T>,
    codes: &[u32],
    quant: &QuantizerSpec<T>,
) -> Vec<u8> {
    let dim = corpus.dim();
    let nbits = quant.nbits();
    let len = packed_len(dim, nbits);
    debug_assert_eq!(dim % indices_per_byte(nbits), 0);
    let mut out = vec![0u8; codes.len() * len];
    out.par_chunks_mut(len * 256)
        .enumerate()
        .for_each(|(chunk, bytes)| {
            let mut buckets = vec![0u8; dim];
            for (i, dst) in bytes.chunks_exact_mut(len).enumerate() {
                let t = chunk * 256 + i;
                let centroid = centroids.row(codes[t] as usize);
                for ((b, &v), &c) in buckets.iter_mut().zip(corpus.token(t)).zip(centroid) {
                    *b = quant.bucketize(v - c);
                }
                pack_into(&buckets, nbits, dst);
            }
        });
    out
}

/// Builds a compressed index. Identical `(corpus, cfg)` give bit-identical
/// arrays regardless of thread count.
pub fn build_index<T: Scalar>(
    corpus: &CorpusEmbeddings<T>,
    cfg: &IndexConfig,
) -> Result<CompressedIndex<T>> {
    cfg.validate()?;
    let n = corpus.num_embeddings();
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    let dim = corpus.dim();
    check_packable(dim, cfg.nbits)?;
    let k = if cfg.num_centroids == 0 {
        auto_num_centroids(n)
    } else {
        cfg.num_centroids
    };
    if k > n {
        return Err(Error::TooFewPoints { points: n, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let wanted = ((cfg.sample_fraction_for(n) * n as f64).ceil() as usize).clamp(k, n);
    let kmeans_seed: u64 = rng.random();
    let quant_seed: u64 = rng.random();

    let centroids = if wanted == n {
        train_centroids(corpus.as_slice(), dim, k, cfg.kmeans_iters, kmeans_seed)?
    } else {
        let mut rows = sample(&mut rng, n, wanted).into_vec();
        rows.sort_unstable();
        let mut training = Vec::with_capacity(wanted * dim);
        for t in rows {
            training.extend_from_slice(corpus.token(t));
        }
        train_centroids(&training, dim, k, cfg.kmeans_iters, kmeans_seed)?
    };

    let codes = assign_codes(corpus, &centroids)?;
    let quantizer = train_quantizer(corpus, &centroids, &codes, cfg.nbits, quant_seed)?;
    let residuals = encode_residuals(corpus, &centroids, &codes, &quantizer);
    let ivf = build_inverted_list(&codes, corpus.doclens(), k);

    CompressedIndex::from_parts(IndexParts {
        nbits: cfg.nbits,
        rng_seed: cfg.rng_seed,
        centroids,
        codes,
        residuals: residuals.into(),
        doclens: corpus.doclens().to_vec(),
        ivf,
        quantizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::unpack_via_lut;
    use crate::scalar::{dot, normalize_in_place};
    use std::collections::{BTreeMap, BTreeSet};

    fn random_unit_rows(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f32> = (0..n * dim).map(|_| rng.random::<f32>() - 0.5).collect();
        for r in v.chunks_mut(dim) {
            normalize_in_place(r);
        }
        v
    }

    #[test]
    fn auto_k_examples() {
        assert_eq!(auto_num_centroids(10_000), 128);
        assert_eq!(auto_num_centroids(1), 1);
        assert_eq!(auto_num_centroids(4), 2);
        assert_eq!(auto_num_centroids(2), 2);
        assert_eq!(auto_num_centroids(16_385), 256);
        assert_eq!(auto_num_centroids(16_384), 128);
    }

    #[test]
    fn auto_k_matches_float_formula() {
        for n in 1..5000usize {
            let f = 2f64.powf((n as f64).sqrt().log2().ceil()) as usize;
            assert_eq!(auto_num_centroids(n), f.clamp(1, n), "n = {n}");
        }
    }

    #[test]
    fn assign_codes_simple_and_ties() {
        let centroids = CentroidSet::new(2, 2, vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let corpus = CorpusEmbeddings::new(2, vec![1], vec![1.0f32, 0.0]).unwrap();
        assert_eq!(assign_codes(&corpus, &centroids).unwrap(), vec![0]);

        let s = std::f32::consts::FRAC_1_SQRT_2;
        let mut c = vec![0.0f32; 12];
        c[3 * 2] = 1.0; // centroid 3 = e1
        c[5 * 2 + 1] = 1.0; // centroid 5 = e2
        for i in [0, 1, 2, 4] {
            c[i * 2] = -1.0;
        }
        let centroids = CentroidSet::new(6, 2, c).unwrap();
        let corpus = CorpusEmbeddings::new(2, vec![1], vec![s, s]).unwrap();
        assert_eq!(assign_codes(&corpus, &centroids).unwrap(), vec![3]);

        let corpus3 = CorpusEmbeddings::new(3, vec![1], vec![1.0f32, 0.0, 0.0]).unwrap();
        assert!(matches!(
            assign_codes(&corpus3, &centroids),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn assign_codes_matches_exhaustive_scan() {
        let tokens = random_unit_rows(50, 6, 1);
        let cents = random_unit_rows(8, 6, 2);
        let corpus = CorpusEmbeddings::new(6, vec![50], tokens.clone()).unwrap();
        let centroids = CentroidSet::new(8, 6, cents.clone()).unwrap();
        let codes = assign_codes(&corpus, &centroids).unwrap();
        for (t, tok) in tokens.chunks(6).enumerate() {
            let sims: Vec<f32> = cents.chunks(6).map(|c| dot(tok, c)).collect();
            let best = sims.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let expect = sims.iter().position(|&s| s == best).unwrap();
            assert_eq!(codes[t] as usize, expect);
        }
    }

    #[test]
    fn inverted_list_examples() {
        let ivf = build_inverted_list(&[0, 0, 1], &[2, 1], 2);
        assert_eq!(ivf.postings(0), &[0]);
        assert_eq!(ivf.postings(1), &[1]);

        let ivf = build_inverted_list(&[2, 2, 2], &[1, 1, 1], 3);
        assert_eq!(ivf.postings(2), &[0, 1, 2]);
        assert!(ivf.postings(0).is_empty() && ivf.postings(1).is_empty());
        assert_eq!(ivf.offsets(), &[0, 0, 0, 3]);
    }

    #[test]
    fn inverted_list_matches_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let k = rng.random_range(1..12);
            let doclens: Vec<u32> = (0..rng.random_range(1..40)).map(|_| rng.random_range(1..9)).collect();
            let total: u32 = doclens.iter().sum();
            let codes: Vec<u32> = (0..total).map(|_| rng.random_range(0..k as u32)).collect();
            let ivf = build_inverted_list(&codes, &doclens, k);

            let mut oracle: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
            let mut t = 0;
            for (p, &l) in doclens.iter().enumerate() {
                for _ in 0..l {
                    oracle.entry(codes[t]).or_default().insert(p as u32);
                    t += 1;
                }
            }
            for c in 0..k {
                let expect: Vec<u32> = oracle.get(&(c as u32)).map(|s| s.iter().copied().collect()).unwrap_or_default();
                assert_eq!(ivf.postings(c), expect.as_slice());
            }
            assert_eq!(ivf, build_inverted_list(&codes, &doclens, k));
        }
    }

    #[test]
    fn build_rejects_empty_and_unpackable() {
        let empty = CorpusEmbeddings::<f32>::new(8, vec![], vec![]).unwrap();
        assert!(matches!(build_index(&empty, &IndexConfig::default()), Err(Error::EmptyCorpus)));

        let rows = random_unit_rows(4, 9, 4);
        let corpus = CorpusEmbeddings::new(9, vec![2, 2], rows).unwrap();
        let cfg = IndexConfig { nbits: 2, num_centroids: 2, ..Default::default() };
        assert!(matches!(
            build_index(&corpus, &cfg),
            Err(Error::PackingUnsupported { dim: 9, nbits: 2 })
        ));

        let rows = random_unit_rows(4, 10, 4);
        let corpus = CorpusEmbeddings::new(10, vec![2, 2], rows).unwrap();
        let cfg = IndexConfig { nbits: 4, num_centroids: 2, ..Default::default() };
        build_index(&corpus, &cfg).unwrap();
        let cfg = IndexConfig { nbits: 3, ..Default::default() };
        assert!(build_index(&corpus, &cfg).is_err());
    }

    #[test]
    fn tiny_index_reconstructs_within_bucket_bound() {
        let dim = 8;
        let rows = random_unit_rows(4, dim, 21);
        let corpus = CorpusEmbeddings::new(dim, vec![2, 2], rows.clone()).unwrap();
        let cfg = IndexConfig { nbits: 2, num_centroids: 2, ..Default::default() };
        let index = build_index(&corpus, &cfg).unwrap();
        assert_eq!(index.bytes_per_token(), 4 + 2);

        let q = index.quantizer();
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for t in 0..4 {
            let c = index.centroids().row(index.codes()[t] as usize);
            for j in 0..dim {
                lo = lo.min(rows[t * dim + j] - c[j]);
                hi = hi.max(rows[t * dim + j] - c[j]);
            }
        }
        let bound = q.max_abs_error(lo, hi);
        for t in 0..4 {
            let tok = index.token(t);
            let buckets = unpack_via_lut(tok.residual, index.lut());
            let c = index.centroids().row(tok.centroid_id as usize);
            for j in 0..dim {
                let approx = c[j] + q.bucket_weights()[buckets[j] as usize];
                assert!((approx - rows[t * dim + j]).abs() <= bound + 1e-6);
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let rows = random_unit_rows(300, 16, 5);
        let doclens = vec![10u32; 30];
        let corpus = CorpusEmbeddings::new(16, doclens, rows).unwrap();
        let cfg = IndexConfig { nbits: 1, rng_seed: 42, sample_fraction: Some(0.5), ..Default::default() };
        let a = build_index(&corpus, &cfg).unwrap();
        let b = build_index(&corpus, &cfg).unwrap();
        assert_eq!(a.centroids(), b.centroids());
        assert_eq!(a.codes(), b.codes());
        assert_eq!(a.residuals(), b.residuals());
        assert_eq!(a.quantizer(), b.quantizer());
        assert_eq!(a.ivf(), b.ivf());
    }
}
