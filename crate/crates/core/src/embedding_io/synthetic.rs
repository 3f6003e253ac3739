//! Hash-seeded token embeddings and a clustered synthetic corpus generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CorpusEmbeddings, Matrix, PassageId, QueryMatrix};
use crate::scalar::Scalar;

pub const MIN_SYNTHETIC_DIM: usize = 8;

fn token_rng(token: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Writes the unit vector for `token` into `out` (`out.len()` is the dim).
pub fn synthetic_embed_into<T: Scalar>(token: &str, seed: u64, out: &mut [T]) {
    let mut rng = token_rng(token, seed);
    let v: Vec<f64> = (0..out.len()).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (o, x) in out.iter_mut().zip(&v) {
        *o = T::lit(x / norm);
    }
}

/// One unit-norm row per token; a pure function of `(token, dim, seed)`.
pub fn synthetic_embed<T: Scalar, S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64) -> Result<Matrix<T>> {
    if dim < MIN_SYNTHETIC_DIM {
        return Err(Error::InvalidConfig(format!(
            "synthetic embeddings need dim >= {MIN_SYNTHETIC_DIM}, got {dim}"
        )));
    }
    let mut data = vec![T::zero(); tokens.len() * dim];
    for (t, row) in tokens.iter().zip(data.chunks_exact_mut(dim)) {
        synthetic_embed_into(t.as_ref(), seed, row);
    }
    Matrix::new(tokens.len(), dim, data)
}

/// Parameters of [`synthetic_corpus`].
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub num_passages: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub num_topics: usize,
    /// Vocabulary words drawn for each topic.
    pub topic_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Standard deviation of the per-token perturbation relative to the unit
    /// word vector.
    pub noise: f64,
    pub num_queries: usize,
    pub query_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_passages: 1000,
            dim: 32,
            vocab_size: 2000,
            num_topics: 50,
            topic_words: 40,
            min_len: 8,
            max_len: 16,
            noise: 0.1,
            num_queries: 32,
            query_len: 8,
            seed: 0,
        }
    }
}

/// Passages are bags of words from one topic; each token is its word vector
/// plus noise. Every query copies words of one target passage.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub corpus: CorpusEmbeddings<f32>,
    pub passage_words: Vec<Vec<u32>>,
    pub queries: Vec<QueryMatrix<f32>>,
    pub query_words: Vec<Vec<u32>>,
    pub query_targets: Vec<PassageId>,
}

fn noisy(word: &[f64], noise: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
    let scale = noise / (word.len() as f64).sqrt();
    let v: Vec<f64> = word
        .iter()
        .map(|w| w + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    out.extend(v.iter().map(|x| (x / norm) as f32));
}

pub fn synthetic_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.num_passages == 0 || cfg.vocab_size == 0 || cfg.num_topics == 0 || cfg.topic_words == 0 {
        return Err(Error::InvalidConfig("synthetic corpus sizes must be positive".into()));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.query_len == 0 {
        return Err(Error::InvalidConfig("need 1 <= min_len <= max_len and query_len >= 1".into()));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::InvalidConfig("noise must be non-negative".into()));
    }
    let dim = cfg.dim;
    let words: Matrix<f64> = synthetic_embed(
        &(0..cfg.vocab_size).map(|i| format!("w{i}")).collect::<Vec<_>>(),
        dim,
        cfg.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0ff_ee00_0001);
    let topics: Vec<Vec<u32>> = (0..cfg.num_topics)
        .map(|_| {
            (0..cfg.topic_words)
                .map(|_| rng.random_range(0..cfg.vocab_size) as u32)
                .collect()
        })
        .collect();

    let mut doclens = Vec::with_capacity(cfg.num_passages);
    let mut passage_words = Vec::with_capacity(cfg.num_passages);
    let mut data = Vec::new();
    for _ in 0..cfg.num_passages {
        let topic = &topics[rng.random_range(0..cfg.num_topics)];
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let ws: Vec<u32> = (0..len).map(|_| topic[rng.random_range(0..topic.len())]).collect();
        for &w in &ws {
            noisy(words.row(w as usize), cfg.noise, &mut rng, &mut data);
        }
        doclens.push(len as u32);
        passage_words.push(ws);
    }

    let mut queries = Vec::with_capacity(cfg.num_queries);
    let mut query_words = Vec::with_capacity(cfg.num_queries);
    let mut query_targets = Vec::with_capacity(cfg.num_queries);
    for _ in 0..cfg.num_queries {
        let target = rng.random_range(0..cfg.num_passages);
        let src = &passage_words[target];
        let ws: Vec<u32> = (0..cfg.query_len).map(|_| src[rng.random_range(0..src.len())]).collect();
        let mut q = Vec::with_capacity(ws.len() * dim);
        for &w in &ws {
            noisy(words.row(w as usize), cfg.noise, &mut rng, &mut q);
        }
        queries.push(QueryMatrix::new(ws.len(), dim, q)?);
        query_words.push(ws);
        query_targets.push(target as PassageId);
    }

    Ok(SyntheticCorpus {
        corpus: CorpusEmbeddings::new(dim, doclens, data)?,
        passage_words,
        queries,
        query_words,
        query_targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{dot, l2_norm};

    #[test]
    fn same_token_same_row() {
        let m: Matrix<f64> = synthetic_embed(&["cat", "dog", "cat"], 16, 7).unwrap();
        assert_eq!(m.row(0), m.row(2));
        assert!((dot(m.row(0), m.row(2)) - 1.0).abs() < 1e-12);
        assert!(dot(m.row(0), m.row(1)) < 0.99);
        for r in m.iter_rows() {
            assert!((l2_norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_changes_vectors() {
        let a: Matrix<f32> = synthetic_embed(&["cat"], 16, 1).unwrap();
        let b: Matrix<f32> = synthetic_embed(&["cat"], 16, 2).unwrap();
        assert_ne!(a.row(0), b.row(0));
    }

    #[test]
    fn f32_and_f64_agree() {
        let a: Matrix<f32> = synthetic_embed(&["x", "y"], 32, 3).unwrap();
        let b: Matrix<f64> = synthetic_embed(&["x", "y"], 32, 3).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(*x, *y as f32);
        }
    }

    #[test]
    fn small_dim_rejected() {
        assert!(synthetic_embed::<f32, _>(&["a"], 4, 0).is_err());
    }

    #[test]
    fn corpus_is_deterministic_and_valid() {
        let cfg = SyntheticConfig { num_passages: 50, num_queries: 5, ..Default::default() };
        let a = synthetic_corpus(&cfg).unwrap();
        let b = synthetic_corpus(&cfg).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.corpus.num_passages(), 50);
        assert_eq!(a.queries.len(), 5);
        for (q, &t) in a.query_words.iter().zip(&a.query_targets) {
            assert!(q.iter().all(|w| a.passage_words[t as usize].contains(w)));
        }
    }
}
