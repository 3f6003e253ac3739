//! The compressed index: centroids, per-token centroid codes and packed
//! residuals, passage lengths, the passage-level inverted list and the
//! residual quantizer.

use std::ops::{Deref, Range};

use crate::codec::{check_packable, packed_len, DecompressionLut, ResidualDecoder};
use crate::error::{Error, Result};
use crate::indexer::QuantizerSpec;
use crate::model::{prefix_offsets, CentroidSet, CompressedVector, InvertedList, PassageId};
use crate::scalar::Scalar;

/// Packed residual bytes, either owned or mapped from `residuals.bin`.
#[derive(Debug)]
pub enum ResidualBytes {
    Owned(Vec<u8>),
    Mapped(memmap2::Mmap),
}

impl Deref for ResidualBytes {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        match self {
            ResidualBytes::Owned(v) => v,
            ResidualBytes::Mapped(m) => m,
        }
    }
}

impl From<Vec<u8>> for ResidualBytes {
    fn from(v: Vec<u8>) -> Self {
        ResidualBytes::Owned(v)
    }
}

#[derive(Debug)]
pub struct CompressedIndex<T> {
    nbits: u8,
    rng_seed: u64,
    centroids: CentroidSet<T>,
    codes: Vec<u32>,
    residuals: ResidualBytes,
    doclens: Vec<u32>,
    offsets: Vec<usize>,
    ivf: InvertedList,
    quantizer: QuantizerSpec<T>,
    lut: DecompressionLut,
    decoder: ResidualDecoder<T>,
}

/// Raw arrays an index is assembled from.
pub struct IndexParts<T> {
    pub nbits: u8,
    pub rng_seed: u64,
    pub centroids: CentroidSet<T>,
    pub codes: Vec<u32>,
    pub residuals: ResidualBytes,
    pub doclens: Vec<u32>,
    pub ivf: InvertedList,
    pub quantizer: QuantizerSpec<T>,
}

impl<T: Scalar> CompressedIndex<T> {
    /// Assembles an index and re-checks every cross-array invariant.
    pub fn from_parts(parts: IndexParts<T>) -> Result<Self> {
        let IndexParts {
            nbits,
            rng_seed,
            centroids,
            codes,
            residuals,
            doclens,
            ivf,
            quantizer,
        } = parts;
        let dim = centroids.dim();
        check_packable(dim, nbits)?;
        let k = centroids.num_centroids();
        if quantizer.nbits() != nbits {
            return Err(Error::InvariantViolation(format!(
                "quantizer has {} bits, index declares {nbits}",
                quantizer.nbits()
            )));
        }
        if let Some(p) = doclens.iter().position(|&l| l == 0) {
            return Err(Error::InvariantViolation(format!("passage {p} has no tokens")));
        }
        let offsets = prefix_offsets(&doclens);
        let total = *offsets.last().unwrap();
        if total != codes.len() {
            return Err(Error::InvariantViolation(format!(
                "doclens sum to {total} but there are {} codes",
                codes.len()
            )));
        }
        if residuals.len() != total * packed_len(dim, nbits) {
            return Err(Error::InvariantViolation(format!(
                "residuals hold {} bytes, expected {}",
                residuals.len(),
                total * packed_len(dim, nbits)
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c as usize >= k) {
            return Err(Error::InvariantViolation(format!(
                "centroid code {bad} >= number of centroids {k}"
            )));
        }
        if ivf.num_centroids() != k {
            return Err(Error::InvariantViolation(format!(
                "inverted list covers {} centroids, index has {k}",
                ivf.num_centroids()
            )));
        }
        let lut = DecompressionLut::new(nbits)?;
        let decoder = ResidualDecoder::new(&lut, &quantizer);
        let index = Self {
            nbits,
            rng_seed,
            centroids,
            codes,
            residuals,
            doclens,
            offsets,
            ivf,
            quantizer,
            lut,
            decoder,
        };
        if index.ivf != crate::indexer::build_inverted_list(&index.codes, &index.doclens, k) {
            return Err(Error::InvariantViolation(
                "inverted list does not match the centroid codes".into(),
            ));
        }
        Ok(index)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    #[inline]
    pub fn nbits(&self) -> u8 {
        self.nbits
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    #[inline]
    pub fn num_passages(&self) -> usize {
        self.doclens.len()
    }

    #[inline]
    pub fn num_embeddings(&self) -> usize {
        self.codes.len()
    }

    #[inline]
    pub fn num_centroids(&self) -> usize {
        self.centroids.num_centroids()
    }

    pub fn centroids(&self) -> &CentroidSet<T> {
        &self.centroids
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn residuals(&self) -> &[u8] {
        &self.residuals
    }

    pub fn residuals_are_mapped(&self) -> bool {
        matches!(self.residuals, ResidualBytes::Mapped(_))
    }

    pub fn doclens(&self) -> &[u32] {
        &self.doclens
    }

    /// Token offsets of each passage, length `num_passages + 1`.
    pub fn passage_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn ivf(&self) -> &InvertedList {
        &self.ivf
    }

    pub fn quantizer(&self) -> &QuantizerSpec<T> {
        &self.quantizer
    }

    pub fn lut(&self) -> &DecompressionLut {
        &self.lut
    }

    pub fn decoder(&self) -> &ResidualDecoder<T> {
        &self.decoder
    }

    /// Packed residual bytes per token.
    #[inline]
    pub fn residual_len(&self) -> usize {
        packed_len(self.dim(), self.nbits)
    }

    /// Storage per token: a 4-byte centroid ID plus the packed residual.
    pub fn bytes_per_token(&self) -> usize {
        std::mem::size_of::<u32>() + self.residual_len()
    }

    /// Token index range of passage `p`.
    #[inline]
    pub fn passage_range(&self, p: PassageId) -> Range<usize> {
        self.offsets[p as usize]..self.offsets[p as usize + 1]
    }

    #[inline]
    pub fn passage_codes(&self, p: PassageId) -> &[u32] {
        &self.codes[self.passage_range(p)]
    }

    #[inline]
    pub fn token(&self, t: usize) -> CompressedVector<'_> {
        let len = self.residual_len();
        CompressedVector {
            centroid_id: self.codes[t],
            residual: &self.residuals[t * len..(t + 1) * len],
        }
    }

    /// Residual bytes of every token of passage `p`, packed.
    #[inline]
    pub fn passage_residuals(&self, p: PassageId) -> &[u8] {
        let r = self.passage_range(p);
        let len = self.residual_len();
        &self.residuals[r.start * len..r.end * len]
    }
}
