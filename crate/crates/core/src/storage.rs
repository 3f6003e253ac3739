//! On-disk index format: a JSON manifest plus six little-endian binary arrays.
//! See `FORMAT.md` at the repository root for the field-by-field layout.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::index::{CompressedIndex, IndexParts, ResidualBytes};
use crate::indexer::QuantizerSpec;
use crate::model::{CentroidSet, InvertedList};

pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CENTROIDS_FILE: &str = "centroids.f32";
pub const CODES_FILE: &str = "codes.u32";
pub const RESIDUALS_FILE: &str = "residuals.bin";
pub const DOCLENS_FILE: &str = "doclens.u32";
pub const IVF_OFFSETS_FILE: &str = "ivf_offsets.u64";
pub const IVF_POSTINGS_FILE: &str = "ivf_postings.u32";

/// Every file an index directory holds, manifest first.
pub const INDEX_FILES: [&str; 7] = [
    MANIFEST_FILE,
    CENTROIDS_FILE,
    CODES_FILE,
    RESIDUALS_FILE,
    DOCLENS_FILE,
    IVF_OFFSETS_FILE,
    IVF_POSTINGS_FILE,
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub dim: usize,
    pub nbits: u8,
    pub num_passages: usize,
    pub num_embeddings: usize,
    pub num_centroids: usize,
    pub rng_seed: u64,
    pub bucket_cutoffs: Vec<f32>,
    pub bucket_weights: Vec<f32>,
    pub files: BTreeMap<String, FileEntry>,
}

/// How `residuals.bin` is brought into memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LoadMode {
    #[default]
    Eager,
    /// Memory-map the residuals; pages are read on first access.
    Lazy,
}

fn le_bytes<const N: usize, V: Copy>(values: &[V], f: impl Fn(V) -> [u8; N]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * N);
    for &v in values {
        out.extend_from_slice(&f(v));
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `index` into `dir` (created if missing). On failure every file this
/// call created is removed.
pub fn save_index(index: &CompressedIndex<f32>, dir: impl AsRef<Path>) -> Result<IndexManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = write_all(index, dir, &mut written);
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<FileEntry> {
    let path = dir.join(name);
    written.push(path.clone());
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(&path, e))?;
    let file = w.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(&path, e))?;
    Ok(FileEntry {
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    })
}

fn write_all(index: &CompressedIndex<f32>, dir: &Path, written: &mut Vec<PathBuf>) -> Result<IndexManifest> {
    let blobs: [(&str, Vec<u8>); 5] = [
        (CENTROIDS_FILE, le_bytes(index.centroids().as_slice(), f32::to_le_bytes)),
        (CODES_FILE, le_bytes(index.codes(), u32::to_le_bytes)),
        (DOCLENS_FILE, le_bytes(index.doclens(), u32::to_le_bytes)),
        (IVF_OFFSETS_FILE, le_bytes(index.ivf().offsets(), u64::to_le_bytes)),
        (IVF_POSTINGS_FILE, le_bytes(index.ivf().all_postings(), u32::to_le_bytes)),
    ];
    let mut files = BTreeMap::new();
    for (name, bytes) in &blobs {
        files.insert(name.to_string(), write_file(dir, name, bytes, written)?);
    }
    files.insert(
        RESIDUALS_FILE.to_string(),
        write_file(dir, RESIDUALS_FILE, index.residuals(), written)?,
    );

    let manifest = IndexManifest {
        format_version: FORMAT_VERSION,
        dim: index.dim(),
        nbits: index.nbits(),
        num_passages: index.num_passages(),
        num_embeddings: index.num_embeddings(),
        num_centroids: index.num_centroids(),
        rng_seed: index.rng_seed(),
        bucket_cutoffs: index.quantizer().bucket_cutoffs().to_vec(),
        bucket_weights: index.quantizer().bucket_weights().to_vec(),
        files,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_file(dir, MANIFEST_FILE, &json, written)?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<IndexManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: IndexManifest = serde_json::from_slice(&bytes)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(manifest.format_version));
    }
    Ok(manifest)
}

fn verify(manifest: &IndexManifest, name: &str, bytes: &[u8]) -> Result<()> {
    let entry = manifest
        .files
        .get(name)
        .ok_or_else(|| Error::InvariantViolation(format!("manifest lists no entry for {name}")))?;
    if entry.bytes != bytes.len() as u64 || entry.sha256 != sha256_hex(bytes) {
        return Err(Error::ChecksumMismatch {
            file: name.to_string(),
        });
    }
    Ok(())
}

fn read_verified(dir: &Path, manifest: &IndexManifest, name: &str, width: usize) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    verify(manifest, name, &bytes)?;
    if bytes.len() % width != 0 {
        return Err(Error::InvariantViolation(format!(
            "{name} is not a whole number of {width}-byte values"
        )));
    }
    Ok(bytes)
}

fn parse<const N: usize, V>(bytes: &[u8], f: impl Fn([u8; N]) -> V) -> Vec<V> {
    bytes
        .chunks_exact(N)
        .map(|c| f(c.try_into().expect("chunk of N bytes")))
        .collect()
}

fn expect_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvariantViolation(format!(
            "{name} holds {got} values, manifest implies {want}"
        )));
    }
    Ok(())
}

/// Loads and fully validates an index directory.
pub fn load_index(dir: impl AsRef<Path>, mode: LoadMode) -> Result<CompressedIndex<f32>> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;

    let centroids = parse(&read_verified(dir, &m, CENTROIDS_FILE, 4)?, f32::from_le_bytes);
    let codes = parse(&read_verified(dir, &m, CODES_FILE, 4)?, u32::from_le_bytes);
    let doclens = parse(&read_verified(dir, &m, DOCLENS_FILE, 4)?, u32::from_le_bytes);
    let ivf_offsets = parse(&read_verified(dir, &m, IVF_OFFSETS_FILE, 8)?, u64::from_le_bytes);
    let ivf_postings = parse(&read_verified(dir, &m, IVF_POSTINGS_FILE, 4)?, u32::from_le_bytes);

    let residuals = match mode {
        LoadMode::Eager => ResidualBytes::Owned(read_verified(dir, &m, RESIDUALS_FILE, 1)?),
        LoadMode::Lazy => {
            let path = dir.join(RESIDUALS_FILE);
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            // SAFETY: the index directory is treated as immutable while loaded;
            // the mapping is read-only.
            let map = unsafe { memmap2::Mmap::map(&file) }.map_err(|e| Error::io(&path, e))?;
            verify(&m, RESIDUALS_FILE, &map)?;
            ResidualBytes::Mapped(map)
        }
    };

    expect_len(CENTROIDS_FILE, centroids.len(), m.num_centroids * m.dim)?;
    expect_len(CODES_FILE, codes.len(), m.num_embeddings)?;
    expect_len(DOCLENS_FILE, doclens.len(), m.num_passages)?;
    expect_len(IVF_OFFSETS_FILE, ivf_offsets.len(), m.num_centroids + 1)?;
    let sum: u64 = doclens.iter().map(|&l| l as u64).sum();
    expect_len("doclens sum", sum as usize, m.num_embeddings)?;

    let centroids = CentroidSet::new(m.num_centroids, m.dim, centroids)?;
    let quantizer = QuantizerSpec::new(m.bucket_cutoffs.clone(), m.bucket_weights.clone())?;
    let ivf = InvertedList::from_parts(ivf_offsets, ivf_postings, m.num_passages)?;
    CompressedIndex::from_parts(IndexParts {
        nbits: m.nbits,
        rng_seed: m.rng_seed,
        centroids,
        codes,
        residuals,
        doclens,
        ivf,
        quantizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indexer::{build_index, IndexConfig};
    use crate::model::CorpusEmbeddings;
    use crate::scalar::normalize_in_place;
    use rand::{Rng, SeedableRng};

    fn small_index(k: usize) -> CompressedIndex<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let dim = 8;
        let doclens = vec![3u32, 2, 4, 1];
        let mut data: Vec<f32> = (0..10 * dim).map(|_| rng.random::<f32>() - 0.5).collect();
        for r in data.chunks_mut(dim) {
            normalize_in_place(r);
        }
        let corpus = CorpusEmbeddings::new(dim, doclens, data).unwrap();
        build_index(&corpus, &IndexConfig { num_centroids: k, ..Default::default() }).unwrap()
    }

    fn assert_same(a: &CompressedIndex<f32>, b: &CompressedIndex<f32>) {
        assert_eq!(a.centroids(), b.centroids());
        assert_eq!(a.codes(), b.codes());
        assert_eq!(a.residuals(), b.residuals());
        assert_eq!(a.doclens(), b.doclens());
        assert_eq!(a.ivf(), b.ivf());
        assert_eq!(a.quantizer(), b.quantizer());
        assert_eq!(a.rng_seed(), b.rng_seed());
    }

    #[test]
    fn round_trip_eager_and_lazy() {
        let index = small_index(3);
        let dir = tempfile::tempdir().unwrap();
        save_index(&index, dir.path()).unwrap();
        for f in INDEX_FILES {
            assert!(dir.path().join(f).is_file(), "{f} missing");
        }
        assert_same(&index, &load_index(dir.path(), LoadMode::Eager).unwrap());
        let lazy = load_index(dir.path(), LoadMode::Lazy).unwrap();
        assert!(lazy.residuals_are_mapped());
        assert_same(&index, &lazy);
    }

    #[test]
    fn tampered_residuals_fail_checksum() {
        let index = small_index(2);
        let dir = tempfile::tempdir().unwrap();
        save_index(&index, dir.path()).unwrap();
        let path = dir.path().join(RESIDUALS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        for mode in [LoadMode::Eager, LoadMode::Lazy] {
            match load_index(dir.path(), mode) {
                Err(Error::ChecksumMismatch { file }) => assert_eq!(file, RESIDUALS_FILE),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn single_centroid_has_two_offsets() {
        let index = small_index(1);
        let dir = tempfile::tempdir().unwrap();
        save_index(&index, dir.path()).unwrap();
        let len = fs::metadata(dir.path().join(IVF_OFFSETS_FILE)).unwrap().len();
        assert_eq!(len, 2 * 8);
        assert_same(&index, &load_index(dir.path(), LoadMode::Eager).unwrap());
    }

    #[test]
    fn unsupported_version() {
        let index = small_index(2);
        let dir = tempfile::tempdir().unwrap();
        save_index(&index, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(load_index(dir.path(), LoadMode::Eager), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn consistent_but_wrong_arrays_are_invariant_violations() {
        // Rewrite codes.u32 with an out-of-range code and a matching checksum.
        let index = small_index(2);
        let dir = tempfile::tempdir().unwrap();
        save_index(&index, dir.path()).unwrap();
        let mut codes = index.codes().to_vec();
        codes[0] = 7;
        let bytes = le_bytes(&codes, u32::to_le_bytes);
        fs::write(dir.path().join(CODES_FILE), &bytes).unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.files.insert(
            CODES_FILE.into(),
            FileEntry { bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) },
        );
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_vec_pretty(&m).unwrap()).unwrap();
        assert!(matches!(
            load_index(dir.path(), LoadMode::Eager),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn failed_save_leaves_no_partial_files() {
        let index = small_index(2);
        let dir = tempfile::tempdir().unwrap();
        // A directory squatting on a file name makes that write fail midway.
        fs::create_dir(dir.path().join(DOCLENS_FILE)).unwrap();
        assert!(save_index(&index, dir.path()).is_err());
        for f in INDEX_FILES {
            if f != DOCLENS_FILE {
                assert!(!dir.path().join(f).exists(), "{f} left behind");
            }
        }
    }
}
