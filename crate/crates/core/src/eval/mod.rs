//! Downstream metrics, future-knowledge probes and embedding export.

mod metrics;
mod probe;

pub use metrics::{
    check_permutation, dst_metrics, f1_metrics, intent_metrics, k_to_100, rs_metrics, MetricReport, ACC_OUT_NOTE,
};
pub use probe::{
    build_probe_set, export_embeddings, future_distance_probe, golden_smaller_ratio, mse, probe_summary, run_probe,
    write_probe_csv, EmbedItem, ProbeItem, ProbeResult, ProbeSummary,
};
