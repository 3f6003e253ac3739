//! IR metrics, result files and the desk-scale analyses: self-recall curves,
//! centroid-score CDFs and latency benchmarking.

mod analysis;
mod metrics;

pub use analysis::{
    bench, centroid_cdf, default_kprime_grid, default_self_recall_ks, self_recall_curve,
    BenchReport, CdfPoint, SelfRecallPoint,
};
pub use metrics::{
    compute_metrics, format_results_tsv, parse_results_tsv, MetricReport, QrelsTable, RankedResults,
};
