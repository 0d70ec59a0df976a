use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::basis::build_sin_basis;
use super::probe::{LinearProbe, MlpProbe, Probe, ProbeKind, SinProbe};
use crate::actstore::{ActivationSet, Site, ValueSplit};
use crate::error::{Error, Result};
use crate::numcore::train::{evaluate, fit_classifier, Classifier, Dataset, TrainConfig};
use crate::numcore::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub n_classes: usize,
    /// Width `m` of the sinusoidal basis.
    pub n_features: usize,
    /// Projection width `q` of the sinusoidal probe.
    pub proj_dim: usize,
    pub mlp_hidden: usize,
    pub train: TrainConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_classes: 1000,
            n_features: 64,
            proj_dim: 64,
            mlp_hidden: 256,
            train: TrainConfig::default(),
        }
    }
}

/// Accuracies on value-disjoint splits, plus where the activations came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kind: ProbeKind,
    pub model_id: String,
    pub layer: usize,
    pub site: Site,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

pub fn init_probe(kind: ProbeKind, d: usize, cfg: &ProbeConfig) -> Result<Probe> {
    if d == 0 {
        return Err(Error::Dimension("activations have no features".into()));
    }
    let mut rng = SeedStream::new(cfg.train.seed).rng(&format!("probe_init/{}", kind.as_str()));
    Ok(match kind {
        ProbeKind::Sin => {
            let basis = build_sin_basis(cfg.n_classes, cfg.n_features)?;
            if cfg.proj_dim == 0 {
                return Err(Error::Config("proj_dim must be positive".into()));
            }
            Probe::Sin(SinProbe::new(d, cfg.proj_dim, basis, &mut rng))
        }
        ProbeKind::Linear => Probe::Linear(LinearProbe::new(d, cfg.n_classes, &mut rng)),
        ProbeKind::Mlp => {
            if cfg.mlp_hidden == 0 {
                return Err(Error::Config("mlp_hidden must be positive".into()));
            }
            Probe::Mlp(MlpProbe::new(d, cfg.mlp_hidden, cfg.n_classes, &mut rng))
        }
    })
}

fn class_labels(acts: &ActivationSet, idx: &[usize], n_classes: usize) -> Result<Vec<usize>> {
    idx.iter()
        .map(|&i| {
            let l = *acts
                .labels
                .get(i)
                .ok_or_else(|| Error::Split(format!("row {i} outside {} rows", acts.len())))?;
            if l < 0 || l as usize >= n_classes {
                return Err(Error::Config(format!("label {l} outside [0, {n_classes})")));
            }
            Ok(l as usize)
        })
        .collect()
}

fn check_disjoint(acts: &ActivationSet, split: &ValueSplit) -> Result<()> {
    let value_set = |idx: &[usize]| -> BTreeSet<i64> { idx.iter().map(|&i| acts.labels[i]).collect() };
    if split.train_idx.iter().chain(&split.val_idx).chain(&split.test_idx).any(|&i| i >= acts.len()) {
        return Err(Error::Split("split indexes rows beyond the activation set".into()));
    }
    let train = value_set(&split.train_idx);
    let val = value_set(&split.val_idx);
    let test = value_set(&split.test_idx);
    if !train.is_disjoint(&test) || !train.is_disjoint(&val) || !val.is_disjoint(&test) {
        return Err(Error::Split("splits share number values".into()));
    }
    Ok(())
}

/// Top-1 accuracy of `probe` on the given rows of `acts`.
pub fn probe_accuracy(probe: &Probe, acts: &ActivationSet, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Split("no rows to evaluate".into()));
    }
    if acts.d_model() != probe.input_dim() {
        return Err(Error::Dimension(format!(
            "probe expects {} features, activations have {}",
            probe.input_dim(),
            acts.d_model()
        )));
    }
    let labels = class_labels(acts, idx, probe.n_classes())?;
    let x: Array2<f64> = acts.vectors.select(Axis(0), idx);
    let (_, acc) = evaluate(probe, Dataset::new(x.view(), &labels)?, 1024);
    Ok(acc)
}

/// Rows sorted by label and sample identity, so that training does not
/// depend on the order rows arrived in.
fn canonical_order(acts: &ActivationSet, idx: &[usize]) -> Vec<usize> {
    let mut out = idx.to_vec();
    out.sort_by(|&a, &b| {
        let (ma, mb) = (&acts.meta[a], &acts.meta[b]);
        (acts.labels[a], ma.sample_id, &ma.prompt_id, ma.token_offset).cmp(&(
            acts.labels[b],
            mb.sample_id,
            &mb.prompt_id,
            mb.token_offset,
        ))
    });
    out
}

/// Trains a probe on `split.train_idx`, selects the epoch by validation
/// accuracy and reports accuracy on all three splits. Parameters are
/// rounded to `f32` before scoring so a saved probe replays its report.
pub fn fit_probe(kind: ProbeKind, acts: &ActivationSet, split: &ValueSplit, cfg: &ProbeConfig) -> Result<(Probe, ProbeReport)> {
    if split.train_idx.is_empty() || split.val_idx.is_empty() || split.test_idx.is_empty() {
        return Err(Error::Split(format!(
            "empty split: {} train, {} val, {} test rows",
            split.train_idx.len(),
            split.val_idx.len(),
            split.test_idx.len()
        )));
    }
    check_disjoint(acts, split)?;
    let probe = init_probe(kind, acts.d_model(), cfg)?;
    let train_idx = canonical_order(acts, &split.train_idx);
    let val_idx = canonical_order(acts, &split.val_idx);
    let y_train = class_labels(acts, &train_idx, cfg.n_classes)?;
    let y_val = class_labels(acts, &val_idx, cfg.n_classes)?;
    let x_train: Array2<f64> = acts.vectors.select(Axis(0), &train_idx);
    let x_val: Array2<f64> = acts.vectors.select(Axis(0), &val_idx);
    let (mut probe, history) = fit_classifier(
        probe,
        Dataset::new(x_train.view(), &y_train)?,
        Dataset::new(x_val.view(), &y_val)?,
        &cfg.train,
    )?;
    probe.round_to_f32();
    let report = ProbeReport {
        kind,
        model_id: acts.model_id.clone(),
        layer: acts.layer,
        site: acts.site,
        n_train: split.train_idx.len(),
        n_val: split.val_idx.len(),
        n_test: split.test_idx.len(),
        train_accuracy: probe_accuracy(&probe, acts, &split.train_idx)?,
        val_accuracy: probe_accuracy(&probe, acts, &split.val_idx)?,
        test_accuracy: probe_accuracy(&probe, acts, &split.test_idx)?,
        best_epoch: history.best_epoch,
        epochs_run: history.epochs.len(),
    };
    Ok((probe, report))
}
