//! End-to-end orchestration: prediction combination, metrics, diagnostics,
//! and the ablation/transfer experiment runner.

mod metrics;
mod run;

pub use metrics::{
    average_ranks, combine_prediction, distribution_diag, evaluate, fingerprint, rank_rank_diag,
    spearman, wasserstein1, DistributionDiag, MetricsReport, SplitMetrics, TercileMetrics,
};
pub use run::{
    full_feature_dim, run_ablation, run_experiment, AblationSummary, ExperimentOutput,
    PipelineConfig, Variant,
};
