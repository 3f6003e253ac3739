//! Late-interaction retrieval over a residual-compressed token index.
//!
//! Passages and queries are matrices of unit-norm token embeddings. A passage's
//! relevance to a query is the sum, over query tokens, of the best cosine
//! against any passage token (MaxSim). The index stores each token as the ID of
//! its nearest k-means centroid plus a `b`-bit-per-dimension quantized
//! residual, and search narrows candidates through centroid-only scoring before
//! decompressing a small set for exact scoring.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the root
//! aliases fix `f32`, with `*64` variants for `f64`.

pub mod codec;
pub mod embedding_io;
pub mod error;
pub mod eval;
pub mod index;
pub mod indexer;
pub mod maxsim;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod storage;

pub use error::{Error, Result};
pub use index::IndexParts;
pub use indexer::{auto_num_centroids, build_index, IndexConfig};
pub use maxsim::{maxsim_embeddings, maxsim_packed, RaggedRows};
pub use model::{CentroidId, CompressedVector, InvertedList, Matrix, PassageId, SearchParams};
pub use pipeline::{
    centroid_only_search, exhaustive_search, search, search_unfiltered, LatencyBreakdown,
    SearchOutput, StageTrace,
};
pub use scalar::Scalar;
pub use storage::{load_index, save_index, LoadMode};

pub type QueryMatrix = model::QueryMatrix<f32>;
pub type QueryMatrix64 = model::QueryMatrix<f64>;
pub type CorpusEmbeddings = model::CorpusEmbeddings<f32>;
pub type CorpusEmbeddings64 = model::CorpusEmbeddings<f64>;
pub type CentroidSet = model::CentroidSet<f32>;
pub type CentroidSet64 = model::CentroidSet<f64>;
pub type CandidateSet = model::CandidateSet<f32>;
pub type CandidateSet64 = model::CandidateSet<f64>;
pub type CompressedIndex = index::CompressedIndex<f32>;
pub type CompressedIndex64 = index::CompressedIndex<f64>;
pub type QuantizerSpec = indexer::QuantizerSpec<f32>;
pub type QuantizerSpec64 = indexer::QuantizerSpec<f64>;
pub type PackedScores = maxsim::PackedScores<f32>;
pub type PackedScores64 = maxsim::PackedScores<f64>;
