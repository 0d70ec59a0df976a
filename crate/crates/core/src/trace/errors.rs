use std::collections::BTreeMap;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::actstore::{ActivationSet, Site};
use crate::contexts::PromptRecord;
use crate::error::{Error, Result};
use crate::probes::Probe;
use crate::toylm::{capture_prompts, Tokenizer, ToyLM};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSample {
    pub sample_id: u64,
    pub truth: i64,
    /// Greedy answer of the model; `-1` when it is not a number token.
    pub prediction: i64,
    /// Probe argmax at each traced layer.
    pub probed: Vec<i64>,
}

impl TraceSample {
    pub fn model_correct(&self) -> bool {
        self.prediction == self.truth
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerErrorTrace {
    pub layers: Vec<usize>,
    pub samples: Vec<TraceSample>,
}

impl LayerErrorTrace {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.samples.iter().find(|s| s.probed.len() != self.layers.len()) {
            return Err(Error::Dimension(format!(
                "sample {} has {} probed values for {} layers",
                s.sample_id,
                s.probed.len(),
                self.layers.len()
            )));
        }
        Ok(())
    }
}

/// Builds a trace from per-layer answer-position activations that share
/// row order with `truth` and `predictions`.
pub fn build_trace(
    truth: &[i64],
    predictions: &[i64],
    acts: &BTreeMap<usize, ActivationSet>,
    probes: &BTreeMap<usize, Probe>,
) -> Result<LayerErrorTrace> {
    if truth.len() != predictions.len() {
        return Err(Error::Dimension("truth and predictions differ in length".into()));
    }
    let layers: Vec<usize> = acts.keys().copied().collect();
    let mut probed_by_layer = Vec::new();
    for layer in &layers {
        let probe = probes
            .get(layer)
            .ok_or_else(|| Error::Config(format!("no probe for layer {layer}")))?;
        let set = &acts[layer];
        if set.len() != truth.len() {
            return Err(Error::Alignment(format!("layer {layer} has {} rows, expected {}", set.len(), truth.len())));
        }
        let mut preds = Vec::with_capacity(truth.len());
        for chunk in set.vectors.axis_chunks_iter(Axis(0), 1024) {
            let logits = probe.try_logits(chunk)?;
            preds.extend(crate::numcore::train::argmax_rows(&logits).into_iter().map(|c| c as i64));
        }
        probed_by_layer.push(preds);
    }
    let samples = (0..truth.len())
        .map(|i| TraceSample {
            sample_id: i as u64,
            truth: truth[i],
            prediction: predictions[i],
            probed: probed_by_layer.iter().map(|p| p[i]).collect(),
        })
        .collect();
    Ok(LayerErrorTrace { layers, samples })
}

/// Runs the model on prompts with targets, records its greedy answer, and
/// probes the answer-position residual stream at every layer with a probe.
pub fn result_probe_eval(
    model: &ToyLM,
    tokenizer: &Tokenizer,
    prompts: &[PromptRecord],
    probes: &BTreeMap<usize, Probe>,
) -> Result<LayerErrorTrace> {
    let truth = targets(prompts)?;
    let predictions = answer_predictions(model, tokenizer, prompts, &Default::default())?;
    let sites = [Site::ResidualOut].into();
    let sets = capture_prompts(model, tokenizer, prompts, &sites, "toy", |p| {
        vec![(p.tokens.len() - 1, p.target.map_or(-1, |t| t as i64))]
    })?;
    let acts: BTreeMap<usize, ActivationSet> = sets
        .into_iter()
        .filter(|s| probes.contains_key(&s.layer))
        .map(|s| (s.layer, s))
        .collect();
    build_trace(&truth, &predictions, &acts, probes)
}

pub(crate) fn targets(prompts: &[PromptRecord]) -> Result<Vec<i64>> {
    prompts
        .iter()
        .map(|p| {
            p.target
                .map(|t| t as i64)
                .ok_or_else(|| Error::Config(format!("prompt {} has no target", p.prompt_id)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    /// Probed value equals the model's prediction, among model-correct samples.
    pub accuracy_correct: Option<f64>,
    /// Same, among model-incorrect samples.
    pub accuracy_incorrect: Option<f64>,
    pub accuracy_vs_truth: Option<f64>,
    pub mean_abs_error: Option<f64>,
    pub breaks: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn summarize(trace: &LayerErrorTrace) -> Result<Vec<LayerSummary>> {
    trace.validate()?;
    let breaks = break_counts(trace);
    let (correct, incorrect): (Vec<&TraceSample>, Vec<&TraceSample>) =
        trace.samples.iter().partition(|s| s.model_correct());
    Ok(trace
        .layers
        .iter()
        .enumerate()
        .map(|(i, &layer)| {
            let agree = |set: &[&TraceSample]| set.iter().filter(|s| s.probed[i] == s.prediction).count();
            let n = trace.samples.len();
            let abs: f64 = trace.samples.iter().map(|s| (s.probed[i] - s.truth).abs() as f64).sum();
            LayerSummary {
                layer,
                accuracy_correct: ratio(agree(&correct), correct.len()),
                accuracy_incorrect: ratio(agree(&incorrect), incorrect.len()),
                accuracy_vs_truth: ratio(trace.samples.iter().filter(|s| s.probed[i] == s.truth).count(), n),
                mean_abs_error: (n > 0).then(|| abs / n as f64),
                breaks: breaks[i],
            }
        })
        .collect())
}

/// Per traced layer, the number of samples whose probed value was right at
/// the previous layer and wrong here. The first layer has none.
pub fn break_counts(trace: &LayerErrorTrace) -> Vec<usize> {
    let mut counts = vec![0; trace.layers.len()];
    for s in &trace.samples {
        for i in 1..s.probed.len() {
            if s.probed[i - 1] == s.truth && s.probed[i] != s.truth {
                counts[i] += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBreaks {
    pub layer: usize,
    pub breaks: usize,
    pub fraction: f64,
}

/// Break fraction over all samples for every layer after the first.
pub fn error_aggregation(trace: &LayerErrorTrace) -> Result<Vec<LayerBreaks>> {
    trace.validate()?;
    let counts = break_counts(trace);
    let n = trace.samples.len();
    Ok(trace
        .layers
        .iter()
        .zip(&counts)
        .skip(1)
        .map(|(&layer, &breaks)| LayerBreaks {
            layer,
            breaks,
            fraction: if n == 0 { 0.0 } else { breaks as f64 / n as f64 },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerExtraction {
    pub layer: usize,
    pub p_extracted_given_incorrect: Option<f64>,
    pub p_not_extracted_given_correct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub n_correct: usize,
    pub n_incorrect: usize,
    /// Some layer probes the true result although the model answers wrong.
    pub p_extracted_given_incorrect: Option<f64>,
    /// No layer probes the true result although the model answers right.
    pub p_not_extracted_given_correct: Option<f64>,
    pub per_layer: Vec<LayerExtraction>,
}

pub fn extraction_stats(trace: &LayerErrorTrace) -> Result<ExtractionStats> {
    trace.validate()?;
    let extracted = |s: &TraceSample| s.probed.iter().any(|&v| v == s.truth);
    let (correct, incorrect): (Vec<&TraceSample>, Vec<&TraceSample>) =
        trace.samples.iter().partition(|s| s.model_correct());
    let per_layer = trace
        .layers
        .iter()
        .enumerate()
        .map(|(i, &layer)| LayerExtraction {
            layer,
            p_extracted_given_incorrect: ratio(
                incorrect.iter().filter(|s| s.probed[i] == s.truth).count(),
                incorrect.len(),
            ),
            p_not_extracted_given_correct: ratio(
                correct.iter().filter(|s| s.probed[i] != s.truth).count(),
                correct.len(),
            ),
        })
        .collect();
    Ok(ExtractionStats {
        n_correct: correct.len(),
        n_incorrect: incorrect.len(),
        p_extracted_given_incorrect: ratio(incorrect.iter().filter(|s| extracted(s)).count(), incorrect.len()),
        p_not_extracted_given_correct: ratio(correct.iter().filter(|s| !extracted(s)).count(), correct.len()),
        per_layer,
    })
}

/// Greedy answers at the last position, batching prompts of equal length.
pub(crate) fn answer_predictions(
    model: &ToyLM,
    tokenizer: &Tokenizer,
    prompts: &[PromptRecord],
    skip: &std::collections::BTreeSet<usize>,
) -> Result<Vec<i64>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in prompts.iter().enumerate() {
        by_len.entry(p.tokens.len()).or_default().push(i);
    }
    let mut out = vec![-1; prompts.len()];
    for idx in by_len.values() {
        for chunk in idx.chunks(512) {
            let mut ids = Vec::new();
            for &i in chunk {
                ids.extend(tokenizer.encode(&prompts[i].tokens)?);
            }
            let logits = model.last_logits(&ids, chunk.len(), skip)?;
            for (row, &i) in logits.rows().into_iter().zip(chunk) {
                let mut best = 0;
                for (c, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = c;
                    }
                }
                out[i] = if best < crate::toylm::N_NUMBERS { best as i64 } else { -1 };
            }
        }
    }
    Ok(out)
}

