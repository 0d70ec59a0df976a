//! The `results.json` payload of every command, and the figures each one
//! turns into.

use serde::{Deserialize, Serialize};

use numlens::actstore::Site;
use numlens::probes::ProbeReport;
use numlens::spectra::{FreqSet, KPoint};
use numlens::toylm::ArithMetrics;
use numlens::trace::{AblationScore, ExtractionStats, LayerBreaks, LayerSummary, LeaveOneOut, OffsetRecovery};

use crate::error::{CliError, Result};
use crate::report::{Figure, Heatmap, LineChart, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainToyResult {
    pub seed: u64,
    pub checkpoint: String,
    pub n_params: usize,
    pub metrics: ArithMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub layer: usize,
    pub site: Site,
    pub context_type: String,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpToyResult {
    pub seed: u64,
    pub dump: String,
    pub model_id: String,
    pub n_prompts: usize,
    pub entries: Vec<DumpEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainResult {
    pub seed: u64,
    pub probe: String,
    pub report: ProbeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEvalResult {
    pub seed: u64,
    pub layer: usize,
    pub site: Site,
    pub n_rows: usize,
    pub accuracy: f64,
    /// Report stored with the probe when it was trained.
    pub trained: Option<ProbeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossLayerResult {
    pub seed: u64,
    pub site: Site,
    pub layers: Vec<usize>,
    /// Row = layer the probe was trained on, column = layer evaluated on.
    pub accuracy: Vec<Vec<f64>>,
    pub reports: Vec<ProbeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub seed: u64,
    pub site: Site,
    pub layers: Vec<usize>,
    pub held_out: Vec<LeaveOneOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaResult {
    pub seed: u64,
    pub names: Vec<String>,
    pub n_keys: usize,
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FftIouResult {
    pub seed: u64,
    pub names: Vec<String>,
    pub n_values: usize,
    pub pca_dims: usize,
    /// PCA was fit on mean-centred rows of each table separately.
    pub pca_centered: bool,
    pub k: usize,
    pub topk: Vec<FreqSet>,
    pub iou: Vec<Vec<f64>>,
    pub sweep: Vec<KPoint>,
    pub optimal_k: usize,
    pub magnitudes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultitokResult {
    pub seed: u64,
    pub source: String,
    pub n_rows: usize,
    pub offsets: Vec<OffsetRecovery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceErrorsResult {
    pub seed: u64,
    pub site: Site,
    pub n_prompts: usize,
    pub n_traced: usize,
    pub model_accuracy: f64,
    pub layers: Vec<usize>,
    pub probe_reports: Vec<ProbeReport>,
    pub summary: Vec<LayerSummary>,
    pub error_aggregation: Vec<LayerBreaks>,
    /// Any-layer extraction, with the per-layer breakdown alongside.
    pub extraction: ExtractionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateResult {
    pub seed: u64,
    pub n_prompts: usize,
    pub scores: Vec<AblationScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Results {
    TrainToy(TrainToyResult),
    DumpToy(DumpToyResult),
    ProbeTrain(ProbeTrainResult),
    ProbeEval(ProbeEvalResult),
    ProbeCrossLayer(CrossLayerResult),
    ProbeLoo(LooResult),
    Rsa(RsaResult),
    FftIou(FftIouResult),
    Multitok(MultitokResult),
    TraceErrors(TraceErrorsResult),
    Ablate(AblateResult),
}

pub const KINDS: [&str; 11] = [
    "train-toy",
    "dump-toy",
    "probe-train",
    "probe-eval",
    "probe-cross-layer",
    "probe-loo",
    "rsa",
    "fft-iou",
    "multitok",
    "trace-errors",
    "ablate",
];

fn some(v: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    v.iter().map(|r| r.iter().map(|&x| Some(x)).collect()).collect()
}

fn curve(name: &str, points: impl IntoIterator<Item = (f64, Option<f64>)>) -> Series {
    Series {
        name: name.into(),
        points: points.into_iter().collect(),
    }
}

fn lines(name: &str, title: &str, x: &str, y: &str, series: Vec<Series>) -> Figure {
    Figure::Lines(LineChart {
        name: name.into(),
        title: title.into(),
        x_label: x.into(),
        y_label: y.into(),
        series,
    })
}

fn labels<T: ToString>(v: &[T]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

impl Results {
    pub fn kind(&self) -> &'static str {
        match self {
            Results::TrainToy(_) => "train-toy",
            Results::DumpToy(_) => "dump-toy",
            Results::ProbeTrain(_) => "probe-train",
            Results::ProbeEval(_) => "probe-eval",
            Results::ProbeCrossLayer(_) => "probe-cross-layer",
            Results::ProbeLoo(_) => "probe-loo",
            Results::Rsa(_) => "rsa",
            Results::FftIou(_) => "fft-iou",
            Results::Multitok(_) => "multitok",
            Results::TraceErrors(_) => "trace-errors",
            Results::Ablate(_) => "ablate",
        }
    }

    /// Parses a results document; an unrecognised `kind` is a report error.
    pub fn from_json(value: serde_json::Value) -> Result<Results> {
        let kind = value
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| CliError::Report("results have no kind".into()))?
            .to_string();
        if !KINDS.contains(&kind.as_str()) {
            return Err(CliError::Report(format!("unknown result kind {kind:?}")));
        }
        serde_json::from_value(value).map_err(|e| CliError::Report(format!("malformed {kind} results: {e}")))
    }

    pub fn figures(&self) -> Result<Vec<Figure>> {
        let figs = match self {
            Results::TrainToy(r) => {
                let h = &r.metrics.history;
                vec![
                    lines(
                        "eval_accuracy",
                        "Held-out answer accuracy",
                        "step",
                        "accuracy",
                        vec![curve("eval", h.iter().map(|p| (p.step as f64, Some(p.eval_accuracy))))],
                    ),
                    lines(
                        "train_loss",
                        "Training loss",
                        "step",
                        "cross-entropy",
                        vec![curve("train", h.iter().map(|p| (p.step as f64, Some(p.train_loss))))],
                    ),
                ]
            }
            Results::DumpToy(_) | Results::ProbeTrain(_) | Results::ProbeEval(_) => Vec::new(),
            Results::ProbeCrossLayer(r) => vec![
                Figure::Heatmap(Heatmap {
                    name: "cross_layer".into(),
                    title: format!("Cross-layer probe accuracy ({})", r.site),
                    row_label: "trained on layer".into(),
                    col_label: "evaluated on layer".into(),
                    rows: labels(&r.layers),
                    cols: labels(&r.layers),
                    values: some(&r.accuracy),
                    range: Some((0.0, 1.0)),
                }),
                lines(
                    "layer_accuracy",
                    "Held-out-value probe accuracy by layer",
                    "layer",
                    "accuracy",
                    vec![curve(
                        "test",
                        r.reports.iter().map(|p| (p.layer as f64, Some(p.test_accuracy))),
                    )],
                ),
            ],
            Results::ProbeLoo(r) => vec![lines(
                "leave_one_out",
                "Leave-one-layer-out probe accuracy",
                "held-out layer",
                "accuracy",
                vec![
                    curve(
                        "held-out layer",
                        r.held_out.iter().map(|l| (l.held_out_layer as f64, Some(l.accuracy))),
                    ),
                    curve(
                        "pooled layers",
                        r.held_out.iter().map(|l| (l.held_out_layer as f64, Some(l.pooled_test_accuracy))),
                    ),
                ],
            )],
            Results::Rsa(r) => vec![Figure::Heatmap(Heatmap {
                name: "rsa".into(),
                title: format!("RSA over {} shared tokens", r.n_keys),
                row_label: "model".into(),
                col_label: "model".into(),
                rows: r.names.clone(),
                cols: r.names.clone(),
                values: some(&r.scores),
                range: Some((-1.0, 1.0)),
            })],
            Results::FftIou(r) => vec![
                Figure::Heatmap(Heatmap {
                    name: "iou".into(),
                    title: format!("Top-{} frequency IoU", r.k),
                    row_label: "model".into(),
                    col_label: "model".into(),
                    rows: r.names.clone(),
                    cols: r.names.clone(),
                    values: some(&r.iou),
                    range: Some((0.0, 1.0)),
                }),
                lines(
                    "k_sweep",
                    &format!("IoU versus k (optimal k = {})", r.optimal_k),
                    "k",
                    "IoU",
                    vec![
                        curve("min", r.sweep.iter().map(|p| (p.k as f64, Some(p.min_iou)))),
                        curve("mean", r.sweep.iter().map(|p| (p.k as f64, Some(p.mean_iou)))),
                    ],
                ),
                lines(
                    "spectra",
                    "Fourier magnitude of PCA components",
                    "frequency bin",
                    "magnitude",
                    r.names
                        .iter()
                        .zip(&r.magnitudes)
                        .map(|(n, m)| curve(n, m.iter().enumerate().skip(1).map(|(i, &v)| (i as f64, Some(v)))))
                        .collect(),
                ),
            ],
            Results::Multitok(r) => vec![lines(
                "offset_recovery",
                "Recovery of earlier chunks from the last number token",
                "offset",
                "accuracy",
                vec![curve("test", r.offsets.iter().map(|o| (o.offset as f64, o.accuracy)))],
            )],
            Results::TraceErrors(r) => {
                let by_layer = |f: fn(&LayerSummary) -> Option<f64>| {
                    r.summary.iter().map(move |s| (s.layer as f64, f(s))).collect::<Vec<_>>()
                };
                vec![
                    lines(
                        "probe_agreement",
                        "Probed answer versus model output",
                        "layer",
                        "accuracy",
                        vec![
                            curve("model correct", by_layer(|s| s.accuracy_correct)),
                            curve("model incorrect", by_layer(|s| s.accuracy_incorrect)),
                            curve("vs ground truth", by_layer(|s| s.accuracy_vs_truth)),
                        ],
                    ),
                    lines(
                        "probe_abs_error",
                        "Mean absolute error of the probed answer",
                        "layer",
                        "mean |probed - truth|",
                        vec![curve("all samples", by_layer(|s| s.mean_abs_error))],
                    ),
                    lines(
                        "error_aggregation",
                        "Layers where the probed answer first goes wrong",
                        "layer",
                        "fraction of samples",
                        vec![curve(
                            "breaks",
                            r.error_aggregation.iter().map(|b| (b.layer as f64, Some(b.fraction))),
                        )],
                    ),
                ]
            }
            Results::Ablate(r) => {
                let single: Vec<&AblationScore> = r.scores.iter().filter(|s| s.skip.len() == 1).collect();
                if single.is_empty() {
                    Vec::new()
                } else {
                    vec![lines(
                        "ablation",
                        "Answer accuracy with one layer skipped",
                        "skipped layer",
                        "accuracy",
                        vec![
                            curve("before", single.iter().map(|s| (s.skip[0] as f64, Some(s.accuracy_before)))),
                            curve("after", single.iter().map(|s| (s.skip[0] as f64, Some(s.accuracy_after)))),
                        ],
                    )]
                }
            }
        };
        for f in &figs {
            f.validate()?;
        }
        Ok(figs)
    }
}
