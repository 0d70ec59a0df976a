use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actstore::{ActivationSet, ValueSplit};
use crate::error::{Error, Result};
use crate::probes::{fit_probe, probe_accuracy, Probe, ProbeConfig, ProbeKind, ProbeReport};

/// Accuracy of the probe trained on layer `layers[i]` when evaluated on the
/// held-out-value rows of layer `layers[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossLayerMatrix {
    pub layers: Vec<usize>,
    pub accuracy: Array2<f64>,
}

/// All sets must describe the same samples in the same row order.
pub fn check_aligned(acts: &BTreeMap<usize, ActivationSet>) -> Result<()> {
    let mut it = acts.values();
    let Some(first) = it.next() else {
        return Err(Error::Config("no layers given".into()));
    };
    for other in it {
        let same_rows = other.labels == first.labels
            && other.d_model() == first.d_model()
            && other
                .meta
                .iter()
                .zip(&first.meta)
                .all(|(a, b)| a.sample_id == b.sample_id && a.prompt_id == b.prompt_id);
        if !same_rows {
            return Err(Error::Alignment(format!(
                "layer {} rows do not line up with layer {}",
                other.layer, first.layer
            )));
        }
    }
    Ok(())
}

/// One probe per layer, all sharing `split`.
pub fn fit_layer_probes(
    kind: ProbeKind,
    acts: &BTreeMap<usize, ActivationSet>,
    split: &ValueSplit,
    cfg: &ProbeConfig,
) -> Result<BTreeMap<usize, (Probe, ProbeReport)>> {
    check_aligned(acts)?;
    let fitted: Vec<_> = acts
        .par_iter()
        .map(|(&layer, set)| Ok((layer, fit_probe(kind, set, split, cfg)?)))
        .collect::<Result<_>>()?;
    Ok(fitted.into_iter().collect())
}

pub fn cross_layer_matrix(
    probes: &BTreeMap<usize, Probe>,
    acts: &BTreeMap<usize, ActivationSet>,
    test_idx: &[usize],
) -> Result<CrossLayerMatrix> {
    check_aligned(acts)?;
    let layers: Vec<usize> = acts.keys().copied().collect();
    if let Some(missing) = layers.iter().find(|l| !probes.contains_key(l)) {
        return Err(Error::Config(format!("no probe trained for layer {missing}")));
    }
    let n = layers.len();
    let cells: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|c| probe_accuracy(&probes[&layers[c / n]], &acts[&layers[c % n]], test_idx))
        .collect::<Result<_>>()?;
    let accuracy = Array2::from_shape_vec((n, n), cells).expect("n*n cells");
    Ok(CrossLayerMatrix { layers, accuracy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    pub held_out_layer: usize,
    pub pooled_layers: Vec<usize>,
    /// Accuracy on the pooled training rows.
    pub train_accuracy: f64,
    /// Accuracy on the pooled rows of the test values.
    pub pooled_test_accuracy: f64,
    /// Accuracy on the held-out layer's test-value rows.
    pub accuracy: f64,
}

/// Rows of `split` gathered from every layer except `layer`, with a split
/// re-indexed into the pooled set.
pub fn pool_layers(
    layer: usize,
    acts: &BTreeMap<usize, ActivationSet>,
    split: &ValueSplit,
) -> Result<(ActivationSet, ValueSplit)> {
    let others: Vec<&ActivationSet> = acts.iter().filter(|(&l, _)| l != layer).map(|(_, s)| s).collect();
    let mut parts = Vec::new();
    let mut pooled = ValueSplit {
        train_idx: Vec::new(),
        val_idx: Vec::new(),
        test_idx: Vec::new(),
        val_values: split.val_values.clone(),
        test_values: split.test_values.clone(),
    };
    let mut offset = 0;
    for set in others {
        for (src, dst) in [
            (&split.train_idx, &mut pooled.train_idx),
            (&split.val_idx, &mut pooled.val_idx),
            (&split.test_idx, &mut pooled.test_idx),
        ] {
            dst.extend(offset..offset + src.len());
            offset += src.len();
            parts.push(set.select(src));
        }
    }
    let set = ActivationSet::concat(&parts)?;
    if set.meta.iter().any(|m| m.layer == layer) {
        return Err(Error::Split(format!("pooled rows include layer {layer}")));
    }
    if pooled.train_idx.is_empty() || pooled.val_idx.is_empty() {
        return Err(Error::Split("pooling left a split empty".into()));
    }
    Ok((set, pooled))
}

/// Trains one probe on every layer but `layer` and scores it on `layer`.
pub fn leave_one_out_eval(
    layer: usize,
    kind: ProbeKind,
    acts: &BTreeMap<usize, ActivationSet>,
    split: &ValueSplit,
    cfg: &ProbeConfig,
) -> Result<LeaveOneOut> {
    check_aligned(acts)?;
    let target = acts
        .get(&layer)
        .ok_or_else(|| Error::Config(format!("layer {layer} not among the activation sets")))?;
    if acts.len() < 3 {
        return Err(Error::Config("leave-one-out needs at least two other layers".into()));
    }
    let (pooled, pooled_split) = pool_layers(layer, acts, split)?;
    let (probe, report) = fit_probe(kind, &pooled, &pooled_split, cfg)?;
    let pooled_layers: BTreeSet<usize> = pooled.meta.iter().map(|m| m.layer).collect();
    Ok(LeaveOneOut {
        held_out_layer: layer,
        pooled_layers: pooled_layers.into_iter().collect(),
        train_accuracy: report.train_accuracy,
        pooled_test_accuracy: report.test_accuracy,
        accuracy: probe_accuracy(&probe, target, &split.test_idx)?,
    })
}
