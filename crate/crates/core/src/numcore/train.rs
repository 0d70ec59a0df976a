//! Minibatch cross-entropy training with Adam.

use ndarray::{Array2, ArrayView2, Axis};
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SeedStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Decoupled (AdamW-style) weight decay; 0 disables it.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 100,
            batch_size: 256,
            seed: 0,
            early_stop_patience: 10,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// A differentiable classifier with a flat list of matrix parameters.
///
/// Biases are stored as `1 x n` matrices.
pub trait Classifier {
    fn n_classes(&self) -> usize;

    /// `n x C` class scores.
    fn logits(&self, x: ArrayView2<f64>) -> Array2<f64>;

    /// Parameter gradients given `dL/dlogits`, in `params()` order.
    fn grads(&self, x: ArrayView2<f64>, grad_logits: ArrayView2<f64>) -> Vec<Array2<f64>>;

    fn params(&self) -> Vec<&Array2<f64>>;

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        argmax_rows(&self.logits(x))
    }
}

/// Features and integer labels in `[0, C)`.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub x: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

impl<'a> Dataset<'a> {
    pub fn new(x: ArrayView2<'a, f64>, labels: &'a [usize]) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        Ok(Dataset { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 = initialization).
    pub best_epoch: usize,
}

/// Adam with bias correction and optional decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    /// Which parameter slices decay; empty means all of them.
    pub decay_mask: Vec<bool>,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(lr: T) -> Self {
        Adam {
            lr,
            beta1: T::from(0.9).unwrap(),
            beta2: T::from(0.999).unwrap(),
            eps: T::from(1e-8).unwrap(),
            weight_decay: T::zero(),
            decay_mask: Vec::new(),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: T) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_decay_mask(mut self, mask: Vec<bool>) -> Self {
        self.decay_mask = mask;
        self
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update of every parameter slice with its matching gradient.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        self.step_scaled(params, grads, T::one());
    }

    /// Like [`Adam::step`] with the learning rate multiplied by `lr_scale`.
    pub fn step_scaled(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr_scale: T) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.step);
        let bc2 = one - self.beta2.powi(self.step);
        let lr = self.lr * lr_scale;
        let decay = one - lr * self.weight_decay;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decay = if self.decay_mask.get(k).copied().unwrap_or(true) { decay } else { one };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] = p[i] * decay - lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (i, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Mean cross-entropy, accuracy and `dL/dlogits` for a batch.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, f64, Array2<f64>) {
    let n = logits.nrows();
    let mut grad = logits.clone();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        loss += z.ln() + max - logits[[i, labels[i]]];
        row /= z;
        row[labels[i]] -= 1.0;
    }
    let scale = 1.0 / n.max(1) as f64;
    grad *= scale;
    (loss * scale, correct as f64 * scale, grad)
}

/// Loss and accuracy over a whole dataset, evaluated in chunks.
pub fn evaluate<M: Classifier + ?Sized>(model: &M, data: Dataset<'_>, chunk: usize) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let (mut loss, mut acc) = (0.0, 0.0);
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk).min(data.len());
        let logits = model.logits(data.x.slice(ndarray::s![start..end, ..]));
        let (l, a, _) = softmax_cross_entropy(&logits, &data.labels[start..end]);
        let w = (end - start) as f64;
        loss += l * w;
        acc += a * w;
        start = end;
    }
    (loss / data.len() as f64, acc / data.len() as f64)
}

/// Train `model` on `train`, keeping the parameters of the best validation
/// epoch (highest accuracy, then lowest loss).
pub fn fit_classifier<M: Classifier + Clone>(
    mut model: M,
    train: Dataset<'_>,
    val: Dataset<'_>,
    cfg: &TrainConfig,
) -> Result<(M, TrainHistory)> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Split("validation set is empty".into()));
    }
    if train.is_empty() && cfg.max_epochs > 0 {
        return Err(Error::Split("training set is empty".into()));
    }
    let c = model.n_classes();
    if let Some(bad) = train.labels.iter().chain(val.labels).find(|&&l| l >= c) {
        return Err(Error::Config(format!("label {bad} outside [0, {c})")));
    }

    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 {
        return Ok((model, history));
    }

    let eval_chunk = cfg.batch_size.max(256);
    let (v_loss0, v_acc0) = evaluate(&model, val, eval_chunk);
    let mut best = (model.clone(), v_acc0, v_loss0);
    let mut since_best = 0;
    let mut adam = Adam::new(cfg.learning_rate).with_weight_decay(cfg.weight_decay);
    let mut rng = SeedStream::new(cfg.seed).rng("fit_classifier/shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum_loss, mut sum_acc) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let xb = train.x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let logits = model.logits(xb.view());
            let (loss, acc, grad_logits) = softmax_cross_entropy(&logits, &yb);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            sum_loss += loss * batch.len() as f64;
            sum_acc += acc * batch.len() as f64;
            let grads = model.grads(xb.view(), grad_logits.view());
            let grad_slices: Vec<&[f64]> = grads
                .iter()
                .map(|g| g.as_slice().expect("standard layout gradient"))
                .collect();
            let mut params = model.params_mut();
            let mut param_slices: Vec<&mut [f64]> = params
                .iter_mut()
                .map(|p| p.as_slice_mut().expect("standard layout parameter"))
                .collect();
            adam.step(&mut param_slices, &grad_slices);
        }
        let (val_loss, val_accuracy) = evaluate(&model, val, eval_chunk);
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: sum_loss / train.len() as f64,
            train_accuracy: sum_acc / train.len() as f64,
            val_loss,
            val_accuracy,
        });
        let improved = val_accuracy > best.1 || (val_accuracy == best.1 && val_loss < best.2);
        if improved {
            best = (model.clone(), val_accuracy, val_loss);
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok((best.0, history))
}
