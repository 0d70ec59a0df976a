use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::actstore::Site;
use crate::error::{Error, Result};
use crate::numcore::train::Adam;
use crate::numcore::SeedStream;
use crate::toylm::model::{rms_norm, rms_norm_backward};
use crate::toylm::{CaptureSpec, Positions, ToyLM};

/// Affine map `h A + b` from a layer's residual state into the space the
/// final norm and unembedding expect.
#[derive(Debug, Clone, PartialEq)]
pub struct LensTranslator {
    pub layer: usize,
    pub a: Array2<f32>,
    pub b: Array1<f32>,
}

impl LensTranslator {
    pub fn identity(layer: usize, d: usize) -> Self {
        LensTranslator {
            layer,
            a: Array2::eye(d),
            b: Array1::zeros(d),
        }
    }

    pub fn apply(&self, h: &Array2<f32>) -> Array2<f32> {
        h.dot(&self.a) + &self.b
    }

    /// Next-token logits read through the model's final norm and unembedding.
    pub fn logits(&self, model: &ToyLM, h: &Array2<f32>) -> Array2<f32> {
        model.unembed(self.apply(h).view())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LensConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LensConfig {
    fn default() -> Self {
        LensConfig {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 256,
            seed: 0,
        }
    }
}

/// Residual states at one layer paired with the model's final logits, over
/// every position of every sequence.
#[derive(Debug, Clone)]
pub struct LensCorpus {
    pub layer: usize,
    pub states: Array2<f32>,
    pub final_logits: Array2<f32>,
}

/// `layer` counts blocks: 0 is the embedding output, `n_layers` the state
/// right before the final norm.
pub fn lens_corpus(model: &ToyLM, seqs: &[Vec<u32>], layer: usize) -> Result<LensCorpus> {
    if layer > model.n_layers() {
        return Err(Error::Config(format!("layer {layer} outside 0..={}", model.n_layers())));
    }
    if seqs.is_empty() {
        return Err(Error::Split("empty lens corpus".into()));
    }
    let spec = CaptureSpec::new([Site::ResidualOut], Positions::All);
    let mut states = Vec::new();
    let mut logits = Vec::new();
    for s in seqs {
        let (l, caps) = model.forward_capture(s, &spec)?;
        states.push(caps[&(layer, Site::ResidualOut)].clone());
        logits.push(l);
    }
    let cat = |parts: &[Array2<f32>]| {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("equal widths")
    };
    Ok(LensCorpus {
        layer,
        states: cat(&states),
        final_logits: cat(&logits),
    })
}

fn log_softmax(z: &Array2<f32>) -> Array2<f64> {
    let mut out = Array2::zeros(z.raw_dim());
    for (mut o, row) in out.rows_mut().into_iter().zip(z.rows()) {
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
        o.zip_mut_with(&row, |o, &v| *o = v as f64 - lse);
    }
    out
}

/// Per-row `KL(p_final || p_lens)`.
pub fn kl_rows(final_logits: &Array2<f32>, lens_logits: &Array2<f32>) -> Vec<f64> {
    let lp = log_softmax(final_logits);
    let lq = log_softmax(lens_logits);
    lp.rows()
        .into_iter()
        .zip(lq.rows())
        .map(|(p, q)| p.iter().zip(q.iter()).map(|(&a, &b)| a.exp() * (a - b)).sum())
        .collect()
}

pub fn lens_kl(model: &ToyLM, lens: &LensTranslator, corpus: &LensCorpus) -> Result<f64> {
    check(lens, corpus)?;
    let kl = kl_rows(&corpus.final_logits, &lens.logits(model, &corpus.states));
    Ok(kl.iter().sum::<f64>() / kl.len() as f64)
}

/// Share of rows whose lens argmax equals the model's argmax.
pub fn lens_agreement(model: &ToyLM, lens: &LensTranslator, corpus: &LensCorpus) -> Result<f64> {
    check(lens, corpus)?;
    let got = crate::toylm::train::predictions(&lens.logits(model, &corpus.states));
    let want = crate::toylm::train::predictions(&corpus.final_logits);
    Ok(got.iter().zip(&want).filter(|(a, b)| a == b).count() as f64 / want.len() as f64)
}

fn check(lens: &LensTranslator, corpus: &LensCorpus) -> Result<()> {
    if lens.layer != corpus.layer {
        return Err(Error::Config(format!(
            "translator for layer {} applied to layer {} states",
            lens.layer, corpus.layer
        )));
    }
    if lens.a.nrows() != corpus.states.ncols() {
        return Err(Error::Dimension("translator width differs from the states".into()));
    }
    Ok(())
}

/// Minimizes mean `KL(final || lens)` over the corpus, starting from the
/// identity map.
pub fn fit_tuned_lens(model: &ToyLM, corpus: &LensCorpus, cfg: &LensConfig) -> Result<LensTranslator> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("lens batch_size and learning_rate must be positive".into()));
    }
    let d = corpus.states.ncols();
    let mut lens = LensTranslator::identity(corpus.layer, d);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut rng = SeedStream::new(cfg.seed).rng(&format!("tuned_lens/{}", corpus.layer));
    let mut order: Vec<usize> = (0..corpus.states.nrows()).collect();
    let eps = model.cfg.norm_eps;
    let unembed = &model.params.unembed;
    let gain = &model.params.final_norm;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let h = corpus.states.select(Axis(0), batch);
            let p = log_softmax(&corpus.final_logits.select(Axis(0), batch));
            let y = lens.apply(&h);
            let (normed, rs) = rms_norm(&y, gain, eps);
            let z = normed.dot(unembed);
            let lq = log_softmax(&z);
            let n = batch.len() as f64;
            let mut loss = 0.0;
            let mut dz = Array2::<f32>::zeros(z.raw_dim());
            for i in 0..batch.len() {
                for c in 0..z.ncols() {
                    let (lp_, lq_) = (p[[i, c]], lq[[i, c]]);
                    loss += lp_.exp() * (lp_ - lq_);
                    dz[[i, c]] = ((lq_.exp() - lp_.exp()) / n) as f32;
                }
            }
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            let dnormed = dz.dot(&unembed.t());
            let mut dgain = Array1::zeros(d);
            let dy = rms_norm_backward(&y, &rs, gain, &dnormed, &mut dgain);
            let da = h.t().dot(&dy);
            let db = dy.sum_axis(Axis(0));
            let mut params = [lens.a.as_slice_mut().unwrap(), lens.b.as_slice_mut().unwrap()];
            adam.step(&mut params, &[da.as_slice().unwrap(), db.as_slice().unwrap()]);
        }
        if lens.a.iter().chain(lens.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
    }
    Ok(lens)
}
