use serde::Serialize;

/// Wall-clock milliseconds spent in each part of a search. Query encoding is
/// not part of the engine and is never included.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    /// Centroid scores plus Stage-1 candidate generation.
    pub candidate_generation: f64,
    /// Stages 2 and 3: pruned and full centroid interaction.
    pub filtering: f64,
    /// Gathering codes and residuals of the passages to decompress.
    pub lookup: f64,
    pub decompression: f64,
    /// Exact MaxSim over decompressed embeddings.
    pub scoring: f64,
    /// End to end, measured independently of the parts.
    pub total: f64,
}

impl LatencyBreakdown {
    pub fn stage_sum(&self) -> f64 {
        self.candidate_generation + self.filtering + self.lookup + self.decompression + self.scoring
    }

    pub(crate) fn accumulate(&mut self, other: &Self) {
        self.candidate_generation += other.candidate_generation;
        self.filtering += other.filtering;
        self.lookup += other.lookup;
        self.decompression += other.decompression;
        self.scoring += other.scoring;
        self.total += other.total;
    }

    pub(crate) fn scaled(&self, by: f64) -> Self {
        Self {
            candidate_generation: self.candidate_generation * by,
            filtering: self.filtering * by,
            lookup: self.lookup * by,
            decompression: self.decompression * by,
            scoring: self.scoring * by,
            total: self.total * by,
        }
    }

    /// Field-wise minimum.
    pub(crate) fn min(&self, other: &Self) -> Self {
        Self {
            candidate_generation: self.candidate_generation.min(other.candidate_generation),
            filtering: self.filtering.min(other.filtering),
            lookup: self.lookup.min(other.lookup),
            decompression: self.decompression.min(other.decompression),
            scoring: self.scoring.min(other.scoring),
            total: self.total.min(other.total),
        }
    }
}

/// Per-stage candidate counts, work counters and timings of one search.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageTrace {
    pub stage1_candidates: usize,
    pub stage2_out: usize,
    pub stage3_out: usize,
    pub result_len: usize,
    /// `K x |Q|` centroid score products computed; one per search.
    pub centroid_score_products: usize,
    /// Centroid score rows visited by the pruned interaction stage.
    pub rows_gathered_stage2: usize,
    /// Centroid score rows visited by the unpruned interaction stage.
    pub rows_gathered_stage3: usize,
    pub decompressed_passages: usize,
    pub decompressed_tokens: usize,
    pub latency: LatencyBreakdown,
}
