//! Evaluation: retrieval metrics, the Score aggregate and benchmark reports.

pub mod bench;
pub mod retrieval;
pub mod score;

pub use bench::{
    benchmark_dataset, benchmark_sr, list_images, DatasetReport, QualityRow, SrReport, SrRow,
    FR_HEADER, NR_HEADER, QMR_HEADER, UNAVAILABLE,
};
pub use retrieval::{macro_auc, med_r, prf_at_k, recall_at_k, EvalPair, EvalPairs, Prf};
pub use score::{aggregate_score, metric_score, MetricConvention, ScoreConvention};
