//! Residual bit packing and lookup-table decompression.
//!
//! A residual is `d` bucket indices of `b` bits each (`b` in {1, 2, 4}), packed
//! `8 / b` to a byte, least-significant bits first: index `j` of a byte occupies
//! bits `b*j .. b*(j+1)`. Unpacking never shifts bits at search time; it reads
//! one of 256 precomputed index lists keyed by the byte value.

use crate::error::{Error, Result};
use crate::indexer::QuantizerSpec;
use crate::model::{CentroidSet, CompressedVector, Matrix};
use crate::scalar::{normalize_in_place, Scalar};

pub const SUPPORTED_NBITS: [u8; 3] = [1, 2, 4];

pub fn check_nbits(nbits: u8) -> Result<()> {
    if SUPPORTED_NBITS.contains(&nbits) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("nbits must be 1, 2 or 4, got {nbits}")))
    }
}

/// Bucket indices stored per byte.
#[inline]
pub fn indices_per_byte(nbits: u8) -> usize {
    8 / nbits as usize
}

/// Packed residual size in bytes for one `dim`-dimensional token.
#[inline]
pub fn packed_len(dim: usize, nbits: u8) -> usize {
    dim * nbits as usize / 8
}

/// `dim` must split into whole bytes at `nbits` bits per component.
pub fn check_packable(dim: usize, nbits: u8) -> Result<()> {
    check_nbits(nbits)?;
    if dim == 0 || dim % indices_per_byte(nbits) != 0 {
        return Err(Error::PackingUnsupported { dim, nbits });
    }
    Ok(())
}

/// Packs `indices` (each `< 2^nbits`) into bytes, LSB-first.
pub fn pack_residual(indices: &[u8], nbits: u8) -> Result<Vec<u8>> {
    check_nbits(nbits)?;
    let per_byte = indices_per_byte(nbits);
    if indices.len() % per_byte != 0 {
        return Err(Error::LengthNotPackable {
            len: indices.len(),
            per_byte,
        });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >> nbits != 0) {
        return Err(Error::IndexOutOfRange { index: bad, nbits });
    }
    let mut out = vec![0u8; indices.len() / per_byte];
    pack_into(indices, nbits, &mut out);
    Ok(out)
}

/// Unchecked packing into a pre-sized buffer; callers guarantee the contract
/// of [`pack_residual`].
pub(crate) fn pack_into(indices: &[u8], nbits: u8, out: &mut [u8]) {
    let per_byte = indices_per_byte(nbits);
    for (byte, chunk) in out.iter_mut().zip(indices.chunks_exact(per_byte)) {
        let mut v = 0u8;
        for (j, &idx) in chunk.iter().enumerate() {
            v |= idx << (nbits as usize * j);
        }
        *byte = v;
    }
}

/// Reference unpacking by explicit shifts and masks.
pub fn unpack_bitshift(packed: &[u8], nbits: u8) -> Vec<u8> {
    let per_byte = indices_per_byte(nbits);
    let mask = ((1u16 << nbits) - 1) as u8;
    let mut out = Vec::with_capacity(packed.len() * per_byte);
    for &byte in packed {
        for j in 0..per_byte {
            out.push((byte >> (nbits as usize * j)) & mask);
        }
    }
    out
}

/// For every byte value, the `8 / b` bucket indices it encodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecompressionLut {
    nbits: u8,
    table: Box<[[u8; 8]; 256]>,
}

impl DecompressionLut {
    pub fn new(nbits: u8) -> Result<Self> {
        check_nbits(nbits)?;
        let per_byte = indices_per_byte(nbits);
        let mask = ((1u16 << nbits) - 1) as u8;
        let mut table = Box::new([[0u8; 8]; 256]);
        for (v, row) in table.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().take(per_byte).enumerate() {
                *slot = ((v as u8) >> (nbits as usize * j)) & mask;
            }
        }
        Ok(Self { nbits, table })
    }

    #[inline]
    pub fn nbits(&self) -> u8 {
        self.nbits
    }

    /// Bucket indices packed in byte value `v`.
    #[inline]
    pub fn indices(&self, v: u8) -> &[u8] {
        &self.table[v as usize][..indices_per_byte(self.nbits)]
    }
}

pub fn unpack_via_lut(packed: &[u8], lut: &DecompressionLut) -> Vec<u8> {
    let mut out = Vec::with_capacity(packed.len() * indices_per_byte(lut.nbits()));
    for &byte in packed {
        out.extend_from_slice(lut.indices(byte));
    }
    out
}

/// Byte-keyed table of reconstruction deltas: row `v` holds
/// `weights[lut[v][j]]` for each packed position `j`. Built once per index so
/// decompression is one table read and one add per component.
#[derive(Clone, Debug)]
pub struct ResidualDecoder<T> {
    per_byte: usize,
    deltas: Vec<T>,
}

impl<T: Scalar> ResidualDecoder<T> {
    pub fn new(lut: &DecompressionLut, quant: &QuantizerSpec<T>) -> Self {
        let per_byte = indices_per_byte(lut.nbits());
        let weights = quant.bucket_weights();
        let mut deltas = Vec::with_capacity(256 * per_byte);
        for v in 0..=255u8 {
            deltas.extend(lut.indices(v).iter().map(|&i| weights[i as usize]));
        }
        Self { per_byte, deltas }
    }

    /// Writes the normalized reconstruction `centroid + deltas` into `out`.
    #[inline]
    pub fn decode_into(&self, centroid: &[T], residual: &[u8], out: &mut [T]) {
        debug_assert_eq!(residual.len() * self.per_byte, centroid.len());
        let per_byte = self.per_byte;
        for (j, &byte) in residual.iter().enumerate() {
            let base = byte as usize * per_byte;
            let deltas = &self.deltas[base..base + per_byte];
            let lo = j * per_byte;
            for ((o, &c), &d) in out[lo..lo + per_byte]
                .iter_mut()
                .zip(&centroid[lo..lo + per_byte])
                .zip(deltas)
            {
                *o = c + d;
            }
        }
        normalize_in_place(out);
    }
}

/// Reconstructs approximate embeddings: per token,
/// `normalize(centroid[id] + weights[bucket])` component-wise.
pub fn reconstruct<'a, T, I>(
    tokens: I,
    centroids: &CentroidSet<T>,
    quant: &QuantizerSpec<T>,
    lut: &DecompressionLut,
) -> Result<Matrix<T>>
where
    T: Scalar,
    I: IntoIterator<Item = CompressedVector<'a>>,
{
    let dim = centroids.dim();
    let expected = packed_len(dim, lut.nbits());
    let decoder = ResidualDecoder::new(lut, quant);
    let mut data = Vec::new();
    let mut rows = 0;
    for tok in tokens {
        if tok.centroid_id as usize >= centroids.num_centroids() {
            return Err(Error::InvariantViolation(format!(
                "centroid id {} out of range",
                tok.centroid_id
            )));
        }
        if tok.residual.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: tok.residual.len(),
            });
        }
        let start = data.len();
        data.resize(start + dim, T::zero());
        decoder.decode_into(
            centroids.row(tok.centroid_id as usize),
            tok.residual,
            &mut data[start..],
        );
        rows += 1;
    }
    Matrix::new(rows, dim, data)
}
