use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{CaptureSpec, Params, Positions, ToyLM};
use super::tokenizer::{Tokenizer, N_NUMBERS};
use crate::actstore::{ActivationSet, RowMeta, Site};
use crate::contexts::{valid_pairs, ArithOp, PromptRecord};
use crate::error::{Error, Result};
use crate::numcore::train::Adam;
use crate::numcore::{Matrix, SeedStream};

pub type ArithTask = ArithOp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArithTrainConfig {
    pub op: ArithOp,
    pub operand_min: u64,
    pub operand_max: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    /// Linear warmup steps before the cosine decay.
    pub warmup: usize,
    /// Operand pairs held out for evaluation (capped at a fifth of all pairs).
    pub eval_pairs: usize,
    pub eval_every: usize,
    /// Stop at the first evaluation that reaches this accuracy.
    pub target_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for ArithTrainConfig {
    fn default() -> Self {
        ArithTrainConfig {
            op: ArithOp::Add,
            operand_min: 0,
            operand_max: 499,
            steps: 20_000,
            batch_size: 128,
            lr: 3e-3,
            weight_decay: 0.1,
            warmup: 200,
            eval_pairs: 2000,
            eval_every: 500,
            target_accuracy: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub train_loss: f64,
    pub eval_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithMetrics {
    pub op: ArithOp,
    pub steps_run: usize,
    pub n_train_pairs: usize,
    pub n_eval_pairs: usize,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    pub history: Vec<EvalPoint>,
}

/// Token ids of `x1 OP x2 =`.
pub fn arithmetic_prompt(op: ArithOp, x1: u64, x2: u64) -> Vec<u32> {
    let op_id = N_NUMBERS as u32 + ["+", "-", "*", "/"].iter().position(|s| *s == op.symbol()).unwrap() as u32;
    vec![x1 as u32, op_id, x2 as u32, N_NUMBERS as u32 + 4]
}

fn pack(op: ArithOp, pairs: &[(u64, u64)]) -> (Vec<u32>, Vec<u32>) {
    let mut ids = Vec::with_capacity(pairs.len() * 4);
    let mut answers = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        ids.extend(arithmetic_prompt(op, a, b));
        answers.push(op.apply(a, b).expect("valid pair") as u32);
    }
    (ids, answers)
}

/// Answer accuracy (argmax over the whole vocabulary) on `pairs`.
pub fn answer_accuracy(model: &ToyLM, op: ArithOp, pairs: &[(u64, u64)], skip: &BTreeSet<usize>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Split("no pairs to evaluate".into()));
    }
    let mut correct = 0usize;
    for chunk in pairs.chunks(512) {
        let (ids, answers) = pack(op, chunk);
        let logits = model.last_logits(&ids, chunk.len(), skip)?;
        correct += predictions(&logits).iter().zip(&answers).filter(|(p, a)| p == a).count();
    }
    Ok(correct as f64 / pairs.len() as f64)
}

pub(crate) fn predictions(logits: &Array2<f32>) -> Vec<u32> {
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
            best as u32
        })
        .collect()
}

/// Held-out split of every valid operand pair: `(train, eval)`.
pub fn split_pairs(cfg: &ArithTrainConfig) -> Result<(Vec<(u64, u64)>, Vec<(u64, u64)>)> {
    let mut pairs = valid_pairs(cfg.op, &(cfg.operand_min..=cfg.operand_max))?;
    if pairs.len() < 2 {
        return Err(Error::Config("fewer than two valid operand pairs".into()));
    }
    let mut rng = SeedStream::new(cfg.seed).rng("arith/pairs");
    pairs.shuffle(&mut rng);
    let n_eval = cfg.eval_pairs.min(pairs.len() / 5).max(1);
    let train = pairs.split_off(n_eval);
    Ok((train, pairs))
}

fn lr_scale(step: usize, warmup: usize, total: usize) -> f32 {
    let warm = ((step + 1) as f32 / warmup.max(1) as f32).min(1.0);
    let progress = step.min(total) as f32 / total.max(1) as f32;
    warm * 0.5 * (1.0 + (std::f32::consts::PI * progress).cos())
}

/// Only projection matrices decay; embeddings and norm gains keep their
/// scale, so the number rows keep their initial structure.
fn decays(name: &str) -> bool {
    name == "unembed" || ["wq", "wk", "wv", "wo", "w_up", "w_down"].iter().any(|w| name.ends_with(w))
}

/// Next-token training on `x1 OP x2 =` prompts, loss on the answer token.
pub fn train_arithmetic(model: &mut ToyLM, cfg: &ArithTrainConfig) -> Result<ArithMetrics> {
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || cfg.eval_every == 0 {
        return Err(Error::Config("batch_size, lr and eval_every must be positive".into()));
    }
    if cfg.operand_max as usize >= N_NUMBERS {
        return Err(Error::Config("operands must be single tokens".into()));
    }
    let (train, eval) = split_pairs(cfg)?;
    let mut rng = SeedStream::new(cfg.seed).rng("arith/batches");
    let mut opt = Adam::new(cfg.lr)
        .with_weight_decay(cfg.weight_decay)
        .with_decay_mask(model.params.named_tensors().iter().map(|t| decays(&t.0)).collect());
    let none = BTreeSet::new();
    let mut history = Vec::new();
    let mut steps_run = 0;
    let mut last_loss = f64::NAN;
    for step in 0..cfg.steps {
        let batch: Vec<(u64, u64)> = (0..cfg.batch_size).map(|_| train[rng.random_range(0..train.len())]).collect();
        let (ids, answers) = pack(cfg.op, &batch);
        let targets: Vec<(usize, u32)> = answers.iter().enumerate().map(|(b, &a)| (b * 4 + 3, a)).collect();
        let (loss, _, grads) = match model.loss_and_grad(&ids, batch.len(), &targets) {
            Err(Error::Divergence { loss, .. }) => return Err(Error::Divergence { epoch: step, loss }),
            other => other?,
        };
        let grads_ref = grads.slices();
        let mut params = model.params.slices_mut();
        opt.step_scaled(&mut params, &grads_ref, lr_scale(step, cfg.warmup, cfg.steps));
        drop(params);
        if model.params.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { epoch: step, loss });
        }
        steps_run = step + 1;
        last_loss = loss;
        if steps_run % cfg.eval_every == 0 || steps_run == cfg.steps {
            let acc = answer_accuracy(model, cfg.op, &eval, &none)?;
            history.push(EvalPoint {
                step: steps_run,
                train_loss: loss,
                eval_accuracy: acc,
            });
            if cfg.target_accuracy.is_some_and(|t| acc >= t) {
                break;
            }
        }
    }
    let eval_accuracy = match history.last() {
        Some(p) if p.step == steps_run => p.eval_accuracy,
        _ => answer_accuracy(model, cfg.op, &eval, &none)?,
    };
    let train_probe = &train[..train.len().min(eval.len().max(1000))];
    let train_accuracy = answer_accuracy(model, cfg.op, train_probe, &none)?;
    if history.is_empty() || history.last().unwrap().step != steps_run {
        history.push(EvalPoint {
            step: steps_run,
            train_loss: last_loss,
            eval_accuracy,
        });
    }
    Ok(ArithMetrics {
        op: cfg.op,
        steps_run,
        n_train_pairs: train.len(),
        n_eval_pairs: eval.len(),
        train_accuracy,
        eval_accuracy,
        history,
    })
}

/// Runs every prompt through the model and gathers the requested sites
/// into one [`ActivationSet`] per `(layer, site)`. `select` names the
/// positions to keep for a prompt and the label of each.
pub fn capture_prompts<F>(
    model: &ToyLM,
    tokenizer: &Tokenizer,
    prompts: &[PromptRecord],
    sites: &BTreeSet<Site>,
    model_id: &str,
    select: F,
) -> Result<Vec<ActivationSet>>
where
    F: Fn(&PromptRecord) -> Vec<(usize, i64)>,
{
    let d = model.cfg.d_model;
    let n_layers = model.cfg.n_layers;
    let mut rows: BTreeMap<(usize, Site), (Vec<f64>, Vec<i64>, Vec<RowMeta>)> = BTreeMap::new();
    let mut sample_id = 0u64;
    for prompt in prompts {
        let picks = select(prompt);
        if picks.is_empty() {
            continue;
        }
        let ids = tokenizer.encode(&prompt.tokens)?;
        let spec = CaptureSpec {
            sites: sites.clone(),
            positions: Positions::Indices(picks.iter().map(|p| p.0).collect()),
        };
        let (_, caps) = model.forward_capture(&ids, &spec)?;
        for ((layer, site), m) in caps {
            if !site.valid_layer(layer, n_layers) {
                continue;
            }
            let entry = rows.entry((layer, site)).or_default();
            for (k, &(pos, label)) in picks.iter().enumerate() {
                entry.0.extend(m.row(k).iter().map(|&v| v as f64));
                entry.1.push(label);
                entry.2.push(RowMeta {
                    sample_id: sample_id + k as u64,
                    token_offset: pos as i64,
                    context_type: prompt.context_type.as_str().to_string(),
                    prompt_id: prompt.prompt_id.clone(),
                    layer,
                    site,
                });
            }
        }
        sample_id += picks.len() as u64;
    }
    rows.into_iter()
        .map(|((layer, site), (data, labels, meta))| {
            let set = ActivationSet {
                model_id: model_id.to_string(),
                n_layers,
                layer,
                site,
                vectors: Matrix::new(labels.len(), d, data)?,
                labels,
                meta,
            };
            set.validate()?;
            Ok(set)
        })
        .collect()
}

/// Gradient of the answer loss, exposed for numerical checks.
pub fn answer_loss_grad(model: &ToyLM, op: ArithOp, pairs: &[(u64, u64)]) -> Result<(f64, Params)> {
    let (ids, answers) = pack(op, pairs);
    let targets: Vec<(usize, u32)> = answers.iter().enumerate().map(|(b, &a)| (b * 4 + 3, a)).collect();
    let (loss, _, g) = model.loss_and_grad(&ids, pairs.len(), &targets)?;
    Ok((loss, g))
}
