//! Embedding files, JSONL text records and the deterministic synthetic
//! embedder that stands in for a neural encoder.
//!
//! `EmbeddingFile` layout (all little-endian), 24-byte header then rows:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `b"EMBF"`               |
//! | 4      | 4    | `dim` (u32)                   |
//! | 8      | 8    | `rows` (u64)                  |
//! | 16     | 4    | dtype, `0` = float32          |
//! | 20     | 4    | reserved, must be `0`         |
//! | 24     | 4·rows·dim | row-major f32 values    |
//!
//! A doclens file is a bare array of u32 token counts, one per passage.

mod synthetic;

pub use synthetic::{
    synthetic_corpus, synthetic_embed, synthetic_embed_into, SyntheticConfig, SyntheticCorpus,
    MIN_SYNTHETIC_DIM,
};

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{first_unnormalized, CorpusEmbeddings, Matrix, NORM_TOLERANCE};

pub const MAGIC: [u8; 4] = *b"EMBF";
pub const HEADER_LEN: usize = 24;
pub const DTYPE_F32: u32 = 0;

/// Serializes `rows x dim` row-major values into the EmbeddingFile layout.
pub fn encode_embeddings(dim: usize, data: &[f32]) -> Result<Vec<u8>> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::LengthMismatch(format!(
            "{} values do not form rows of dim {dim}",
            data.len()
        )));
    }
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidConfig("dim exceeds u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&((data.len() / dim) as u64).to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses an EmbeddingFile image. Shape only; norms are not checked.
pub fn decode_embeddings(bytes: &[u8]) -> Result<Matrix<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::HeaderMismatch(format!(
            "file holds {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::HeaderMismatch("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let dim = u32_at(4) as usize;
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dtype = u32_at(16);
    if dtype != DTYPE_F32 {
        return Err(Error::HeaderMismatch(format!("unknown dtype {dtype}")));
    }
    if u32_at(20) != 0 {
        return Err(Error::HeaderMismatch("reserved field is not zero".into()));
    }
    if dim == 0 {
        return Err(Error::HeaderMismatch("dim is zero".into()));
    }
    let want = (rows as u128) * (dim as u128) * 4 + HEADER_LEN as u128;
    if want != bytes.len() as u128 {
        return Err(Error::HeaderMismatch(format!(
            "header declares {rows} rows of dim {dim} ({want} bytes) but file holds {} bytes",
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows as usize, dim, data)
}

pub fn encode_doclens(doclens: &[u32]) -> Vec<u8> {
    doclens.iter().flat_map(|l| l.to_le_bytes()).collect()
}

pub fn decode_doclens(bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::LengthMismatch(format!(
            "doclens file holds {} bytes, not a whole number of u32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_embeddings(path: impl AsRef<Path>, dim: usize, data: &[f32]) -> Result<()> {
    write(path.as_ref(), &encode_embeddings(dim, data)?)
}

pub fn write_doclens(path: impl AsRef<Path>, doclens: &[u32]) -> Result<()> {
    write(path.as_ref(), &encode_doclens(doclens))
}

/// Reads an EmbeddingFile and rejects any row whose norm is off by more than
/// the tolerance.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    let m = decode_embeddings(&read(path.as_ref())?)?;
    if let Some((row, norm)) = first_unnormalized(m.as_slice(), m.dim(), NORM_TOLERANCE) {
        return Err(Error::NotNormalized { row, norm });
    }
    Ok(m)
}

pub fn read_doclens(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    decode_doclens(&read(path.as_ref())?)
}

/// Loads an embedding file plus its doclens companion as a validated corpus.
pub fn load_corpus(
    embeddings: impl AsRef<Path>,
    doclens: impl AsRef<Path>,
) -> Result<CorpusEmbeddings<f32>> {
    let m = decode_embeddings(&read(embeddings.as_ref())?)?;
    let doclens = read_doclens(doclens)?;
    let total: u64 = doclens.iter().map(|&l| l as u64).sum();
    if total != m.rows() as u64 {
        return Err(Error::LengthMismatch(format!(
            "doclens sum to {total} but the embedding file has {} rows",
            m.rows()
        )));
    }
    let dim = m.dim();
    CorpusEmbeddings::new(dim, doclens, m.into_vec())
}

/// One line of a JSONL passage or query file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<TextRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
