//! Measurement suites over per-layer activations: cross-layer probe
//! transfer, leave-one-out probes, multi-token recovery, result probing,
//! error aggregation and layer ablations.

mod ablate;
mod errors;
mod layers;
mod multitok;

use serde::{Deserialize, Serialize};

pub use ablate::{ablate_and_score, answer_accuracy, AblationScore};
pub use errors::{
    break_counts, build_trace, error_aggregation, extraction_stats, result_probe_eval, summarize, ExtractionStats,
    LayerBreaks, LayerErrorTrace, LayerExtraction, LayerSummary, TraceSample,
};
pub use layers::{
    check_aligned, cross_layer_matrix, fit_layer_probes, leave_one_out_eval, pool_layers, CrossLayerMatrix,
    LeaveOneOut,
};
pub use multitok::{multitok_recovery, span_chunks, MultitokConfig, OffsetRecovery};

/// Everything the trace commands produce, for one results file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub cross_layer: Option<CrossLayerMatrix>,
    pub leave_one_out: Vec<LeaveOneOut>,
    pub multitoken: Vec<OffsetRecovery>,
    pub layers: Vec<LayerSummary>,
    pub error_aggregation: Vec<LayerBreaks>,
    pub extraction: Option<ExtractionStats>,
    pub ablation: Vec<AblationScore>,
}
