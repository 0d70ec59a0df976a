use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};

use super::config::{NumberInit, ToyConfig};
use crate::actstore::Site;
use crate::error::{Error, Result};
use crate::numcore::SeedStream;
use crate::probes::sin_encoding;

/// Weights of one pre-norm transformer block. Projections act on row
/// vectors (`x · W`).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attn_norm: Array1<f32>,
    pub wq: Array2<f32>,
    pub wk: Array2<f32>,
    pub wv: Array2<f32>,
    pub wo: Array2<f32>,
    pub mlp_norm: Array1<f32>,
    pub w_up: Array2<f32>,
    pub w_down: Array2<f32>,
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Array2<f32>,
    pub blocks: Vec<BlockParams>,
    pub final_norm: Array1<f32>,
    /// `d_model x vocab`.
    pub unembed: Array2<f32>,
}

impl Params {
    pub fn zeros(cfg: &ToyConfig) -> Self {
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        Params {
            tok_emb: Array2::zeros((v, d)),
            blocks: (0..cfg.n_layers)
                .map(|_| BlockParams {
                    attn_norm: Array1::zeros(d),
                    wq: Array2::zeros((d, d)),
                    wk: Array2::zeros((d, d)),
                    wv: Array2::zeros((d, d)),
                    wo: Array2::zeros((d, d)),
                    mlp_norm: Array1::zeros(d),
                    w_up: Array2::zeros((d, f)),
                    w_down: Array2::zeros((f, d)),
                })
                .collect(),
            final_norm: Array1::zeros(d),
            unembed: Array2::zeros((d, v)),
        }
    }

    /// `(name, shape, values)` for every tensor in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        out.push(("tok_emb".into(), self.tok_emb.shape().to_vec(), self.tok_emb.as_slice().unwrap()));
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            out.push((p("attn_norm"), b.attn_norm.shape().to_vec(), b.attn_norm.as_slice().unwrap()));
            out.push((p("wq"), b.wq.shape().to_vec(), b.wq.as_slice().unwrap()));
            out.push((p("wk"), b.wk.shape().to_vec(), b.wk.as_slice().unwrap()));
            out.push((p("wv"), b.wv.shape().to_vec(), b.wv.as_slice().unwrap()));
            out.push((p("wo"), b.wo.shape().to_vec(), b.wo.as_slice().unwrap()));
            out.push((p("mlp_norm"), b.mlp_norm.shape().to_vec(), b.mlp_norm.as_slice().unwrap()));
            out.push((p("w_up"), b.w_up.shape().to_vec(), b.w_up.as_slice().unwrap()));
            out.push((p("w_down"), b.w_down.shape().to_vec(), b.w_down.as_slice().unwrap()));
        }
        out.push(("final_norm".into(), self.final_norm.shape().to_vec(), self.final_norm.as_slice().unwrap()));
        out.push(("unembed".into(), self.unembed.shape().to_vec(), self.unembed.as_slice().unwrap()));
        out
    }

    /// Mutable views in the same order as [`Params::named_tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = vec![self.tok_emb.as_slice_mut().unwrap()];
        for b in self.blocks.iter_mut() {
            out.push(b.attn_norm.as_slice_mut().unwrap());
            out.push(b.wq.as_slice_mut().unwrap());
            out.push(b.wk.as_slice_mut().unwrap());
            out.push(b.wv.as_slice_mut().unwrap());
            out.push(b.wo.as_slice_mut().unwrap());
            out.push(b.mlp_norm.as_slice_mut().unwrap());
            out.push(b.w_up.as_slice_mut().unwrap());
            out.push(b.w_down.as_slice_mut().unwrap());
        }
        out.push(self.final_norm.as_slice_mut().unwrap());
        out.push(self.unembed.as_slice_mut().unwrap());
        out
    }

    pub fn slices(&self) -> Vec<&[f32]> {
        self.named_tensors().into_iter().map(|(_, _, s)| s).collect()
    }

    pub fn count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

/// Which internal vectors to record during a forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureSpec {
    pub sites: BTreeSet<Site>,
    pub positions: Positions,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Positions {
    All,
    Last,
    Indices(Vec<usize>),
}

impl CaptureSpec {
    pub fn new(sites: impl IntoIterator<Item = Site>, positions: Positions) -> Self {
        CaptureSpec {
            sites: sites.into_iter().collect(),
            positions,
        }
    }

    /// Residual stream at every layer boundary (embeddings, each block,
    /// final state before the norm).
    pub fn residual(positions: Positions) -> Self {
        Self::new([Site::Embedding, Site::ResidualOut, Site::FinalPrenorm], positions)
    }

    fn validate(&self, seq_len: usize) -> Result<Vec<usize>> {
        if self.sites.contains(&Site::OutputEmbedding) {
            return Err(Error::Config("output_embedding is a weight, not an activation site".into()));
        }
        match &self.positions {
            Positions::All => Ok((0..seq_len).collect()),
            Positions::Last => Ok(vec![seq_len - 1]),
            Positions::Indices(idx) => {
                if let Some(bad) = idx.iter().find(|&&i| i >= seq_len) {
                    return Err(Error::Config(format!("position {bad} beyond sequence length {seq_len}")));
                }
                Ok(idx.clone())
            }
        }
    }
}

/// Captured vectors keyed by `(layer, site)`; rows follow the requested
/// positions.
pub type Captures = BTreeMap<(usize, Site), Array2<f32>>;

#[derive(Debug, Clone)]
pub(crate) struct Rope {
    cos: Array2<f32>,
    sin: Array2<f32>,
}

impl Rope {
    fn new(max_len: usize, head_dim: usize, base: f32) -> Self {
        let half = head_dim / 2;
        let mut cos = Array2::zeros((max_len, half));
        let mut sin = Array2::zeros((max_len, half));
        for p in 0..max_len {
            for i in 0..half {
                let freq = (base as f64).powf(-2.0 * i as f64 / head_dim as f64);
                let ang = p as f64 * freq;
                cos[[p, i]] = ang.cos() as f32;
                sin[[p, i]] = ang.sin() as f32;
            }
        }
        Rope { cos, sin }
    }

    /// Rotates every head of every row in place. `inverse` applies the
    /// transpose rotation (used for gradients).
    fn apply(&self, x: &mut Array2<f32>, seq: usize, n_heads: usize, inverse: bool) {
        let dh = x.ncols() / n_heads;
        let half = dh / 2;
        for (row, mut xr) in x.rows_mut().into_iter().enumerate() {
            let p = row % seq;
            let xs = xr.as_slice_mut().unwrap();
            for h in 0..n_heads {
                let base = h * dh;
                for i in 0..half {
                    let (c, mut s) = (self.cos[[p, i]], self.sin[[p, i]]);
                    if inverse {
                        s = -s;
                    }
                    let a = xs[base + i];
                    let b = xs[base + half + i];
                    xs[base + i] = a * c - b * s;
                    xs[base + half + i] = a * s + b * c;
                }
            }
        }
    }
}

/// Intermediate values of one block kept for the backward pass.
pub(crate) struct BlockCache {
    pub x_in: Array2<f32>,
    pub r1: Vec<f32>,
    pub h1: Array2<f32>,
    pub q: Array2<f32>,
    pub k: Array2<f32>,
    pub v: Array2<f32>,
    pub probs: Vec<f32>,
    pub ctx: Array2<f32>,
    pub x_mid: Array2<f32>,
    pub r2: Vec<f32>,
    pub h2: Array2<f32>,
    pub up: Array2<f32>,
    pub act: Array2<f32>,
}

pub(crate) struct ForwardCache {
    pub blocks: Vec<Option<BlockCache>>,
    pub x_final: Array2<f32>,
    pub r_final: Vec<f32>,
}

/// Small decoder-only transformer: RMS pre-norm blocks, rotary positions,
/// GELU MLP, untied unembedding.
#[derive(Debug, Clone)]
pub struct ToyLM {
    pub cfg: ToyConfig,
    pub params: Params,
    pub(crate) rope: Rope,
}

pub(crate) fn rms_norm(x: &Array2<f32>, gain: &Array1<f32>, eps: f32) -> (Array2<f32>, Vec<f32>) {
    let d = x.ncols() as f32;
    let mut out = x.clone();
    let mut rs = Vec::with_capacity(x.nrows());
    for mut row in out.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f32>() / d;
        let r = (ms + eps).sqrt();
        rs.push(r);
        row.zip_mut_with(gain, |v, g| *v = *v / r * g);
    }
    (out, rs)
}

/// Gradient of `rms_norm` w.r.t. its input, accumulating the gain gradient.
pub(crate) fn rms_norm_backward(
    x: &Array2<f32>,
    rs: &[f32],
    gain: &Array1<f32>,
    dy: &Array2<f32>,
    dgain: &mut Array1<f32>,
) -> Array2<f32> {
    let d = x.ncols();
    let mut dx = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let r = rs[i];
        let xr = x.row(i);
        let dyr = dy.row(i);
        let mut dot = 0.0f32;
        for j in 0..d {
            let xhat = xr[j] / r;
            dgain[j] += dyr[j] * xhat;
            dot += dyr[j] * gain[j] * xhat;
        }
        let mean = dot / d as f32;
        for j in 0..d {
            let xhat = xr[j] / r;
            dx[[i, j]] = (dyr[j] * gain[j] - xhat * mean) / r;
        }
    }
    dx
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl ToyLM {
    /// Deterministic initialization from `cfg.seed`.
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        cfg.validate()?;
        let mut p = Params::zeros(&cfg);
        let mut rng = SeedStream::new(cfg.seed).rng("toylm/init");
        let normal = Normal::new(0.0f32, cfg.init_std).map_err(|e| Error::Config(e.to_string()))?;
        let residual_scale = 1.0 / (2.0 * cfg.n_layers as f32).sqrt();
        let mut fill = |a: &mut Array2<f32>, scale: f32| a.mapv_inplace(|_| normal.sample(&mut rng) * scale);
        fill(&mut p.tok_emb, 1.0);
        for b in p.blocks.iter_mut() {
            b.attn_norm.fill(1.0);
            b.mlp_norm.fill(1.0);
            fill(&mut b.wq, 1.0);
            fill(&mut b.wk, 1.0);
            fill(&mut b.wv, 1.0);
            fill(&mut b.wo, residual_scale);
            fill(&mut b.w_up, 1.0);
            fill(&mut b.w_down, residual_scale);
        }
        p.final_norm.fill(1.0);
        fill(&mut p.unembed, 1.0);
        if let NumberInit::Sinusoidal { features, scale } = cfg.number_init {
            for v in 0..super::tokenizer::N_NUMBERS {
                let code = sin_encoding(v, features);
                for (j, c) in code.iter().enumerate() {
                    p.tok_emb[[v, j]] = *c as f32 * scale;
                    p.unembed[[j, v]] = *c as f32 * scale;
                }
            }
        }
        let rope = Rope::new(cfg.max_seq_len, cfg.head_dim(), cfg.rope_base);
        Ok(ToyLM { cfg, params: p, rope })
    }

    pub fn from_params(cfg: ToyConfig, params: Params) -> Result<Self> {
        cfg.validate()?;
        let expected = Params::zeros(&cfg);
        let shapes_match = expected
            .named_tensors()
            .iter()
            .zip(params.named_tensors())
            .all(|(a, b)| a.0 == b.0 && a.1 == b.1)
            && expected.blocks.len() == params.blocks.len();
        if !shapes_match {
            return Err(Error::Config("parameter shapes do not match the configuration".into()));
        }
        let rope = Rope::new(cfg.max_seq_len, cfg.head_dim(), cfg.rope_base);
        Ok(ToyLM { cfg, params, rope })
    }

    pub fn n_layers(&self) -> usize {
        self.cfg.n_layers
    }

    fn check_tokens(&self, ids: &[u32], batch: usize) -> Result<usize> {
        if batch == 0 || ids.is_empty() || ids.len() % batch != 0 {
            return Err(Error::Dimension(format!("{} tokens do not split into {batch} sequences", ids.len())));
        }
        let seq = ids.len() / batch;
        if seq > self.cfg.max_seq_len {
            return Err(Error::Dimension(format!(
                "sequence length {seq} exceeds max_seq_len {}",
                self.cfg.max_seq_len
            )));
        }
        if let Some(bad) = ids.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::Token(format!("id {bad} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        Ok(seq)
    }

    fn check_skip(&self, skip: &BTreeSet<usize>) -> Result<Vec<bool>> {
        let l = self.cfg.n_layers;
        if let Some(bad) = skip.iter().find(|&&i| i == 0 || i > l) {
            return Err(Error::Config(format!("cannot skip layer {bad}; blocks are 1..={l}")));
        }
        Ok((1..=l).map(|i| skip.contains(&i)).collect())
    }

    /// Causal multi-head attention on post-rope `q, k, v`. Returns the
    /// concatenated head outputs and the attention probabilities.
    fn attention(&self, q: &Array2<f32>, k: &Array2<f32>, v: &Array2<f32>, batch: usize, seq: usize) -> (Array2<f32>, Vec<f32>) {
        let h = self.cfg.n_heads;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        let mut ctx = Array2::zeros(q.raw_dim());
        let mut probs = vec![0.0f32; batch * h * seq * seq];
        let mut scores = vec![0.0f32; seq];
        for b in 0..batch {
            for head in 0..h {
                let cols = head * dh..(head + 1) * dh;
                for i in 0..seq {
                    let qi = q.slice(s![b * seq + i, cols.clone()]);
                    let mut max = f32::NEG_INFINITY;
                    for j in 0..=i {
                        let kj = k.slice(s![b * seq + j, cols.clone()]);
                        let sc = qi.dot(&kj) * scale;
                        scores[j] = sc;
                        max = max.max(sc);
                    }
                    let mut z = 0.0;
                    for sc in scores.iter_mut().take(i + 1) {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    let base = ((b * h + head) * seq + i) * seq;
                    let mut out = ctx.slice_mut(s![b * seq + i, cols.clone()]);
                    for j in 0..=i {
                        let p = scores[j] / z;
                        probs[base + j] = p;
                        out.scaled_add(p, &v.slice(s![b * seq + j, cols.clone()]));
                    }
                }
            }
        }
        (ctx, probs)
    }

    /// Runs the blocks. Returns the final residual state (before the last
    /// norm), optionally with per-block caches and captures at `positions`.
    pub(crate) fn run(
        &self,
        ids: &[u32],
        batch: usize,
        skip: &[bool],
        keep_cache: bool,
        mut capture: Option<(&CaptureSpec, &[usize], &mut Captures)>,
    ) -> Result<ForwardCache> {
        let seq = self.check_tokens(ids, batch)?;
        let p = &self.params;
        let eps = self.cfg.norm_eps;
        let mut x = p.tok_emb.select(Axis(0), &ids.iter().map(|&t| t as usize).collect::<Vec<_>>());

        let record = |layer: usize, site: Site, m: &Array2<f32>, cap: &mut Option<(&CaptureSpec, &[usize], &mut Captures)>| {
            if let Some((spec, positions, out)) = cap.as_mut() {
                if spec.sites.contains(&site) {
                    let rows: Vec<usize> = (0..batch)
                        .flat_map(|b| positions.iter().map(move |&pos| b * seq + pos))
                        .collect();
                    out.insert((layer, site), m.select(Axis(0), &rows));
                }
            }
        };
        record(0, Site::Embedding, &x, &mut capture);
        record(0, Site::ResidualOut, &x, &mut capture);

        let mut caches = Vec::with_capacity(self.cfg.n_layers);
        for (li, bp) in p.blocks.iter().enumerate() {
            let layer = li + 1;
            if skip[li] {
                caches.push(None);
                record(layer, Site::ResidualOut, &x, &mut capture);
                continue;
            }
            let (h1, r1) = rms_norm(&x, &bp.attn_norm, eps);
            let mut q = h1.dot(&bp.wq);
            let mut k = h1.dot(&bp.wk);
            let v = h1.dot(&bp.wv);
            self.rope.apply(&mut q, seq, self.cfg.n_heads, false);
            self.rope.apply(&mut k, seq, self.cfg.n_heads, false);
            let (ctx, probs) = self.attention(&q, &k, &v, batch, seq);
            let attn_out = ctx.dot(&bp.wo);
            record(layer, Site::AttnPreproj, &ctx, &mut capture);
            record(layer, Site::AttnOut, &attn_out, &mut capture);
            let x_mid = &x + &attn_out;
            let (h2, r2) = rms_norm(&x_mid, &bp.mlp_norm, eps);
            let up = h2.dot(&bp.w_up);
            let act = up.mapv(gelu);
            let mlp_out = act.dot(&bp.w_down);
            record(layer, Site::MlpOut, &mlp_out, &mut capture);
            let x_out = &x_mid + &mlp_out;
            record(layer, Site::ResidualOut, &x_out, &mut capture);
            if keep_cache {
                caches.push(Some(BlockCache {
                    x_in: x,
                    r1,
                    h1,
                    q,
                    k,
                    v,
                    probs,
                    ctx,
                    x_mid,
                    r2,
                    h2,
                    up,
                    act,
                }));
            } else {
                caches.push(None);
            }
            x = x_out;
        }
        let final_layer = self.cfg.n_layers + 1;
        record(final_layer, Site::FinalPrenorm, &x, &mut capture);
        let (normed, r_final) = rms_norm(&x, &p.final_norm, eps);
        record(final_layer, Site::FinalNorm, &normed, &mut capture);
        Ok(ForwardCache {
            blocks: caches,
            x_final: x,
            r_final,
        })
    }

    /// Unembedding of pre-norm final states.
    pub fn unembed(&self, x_final: ArrayView2<f32>) -> Array2<f32> {
        let (normed, _) = rms_norm(&x_final.to_owned(), &self.params.final_norm, self.cfg.norm_eps);
        normed.dot(&self.params.unembed)
    }

    /// `seq x vocab` logits for one sequence.
    pub fn logits(&self, ids: &[u32]) -> Result<Array2<f32>> {
        self.forward_skip(ids, &BTreeSet::new())
    }

    /// Logits with the listed blocks (1-based) replaced by the identity.
    pub fn forward_skip(&self, ids: &[u32], skip: &BTreeSet<usize>) -> Result<Array2<f32>> {
        let mask = self.check_skip(skip)?;
        let cache = self.run(ids, 1, &mask, false, None)?;
        Ok(self.unembed(cache.x_final.view()))
    }

    /// Logits at the last position of each of `batch` equal-length
    /// sequences packed in `ids`.
    pub fn last_logits(&self, ids: &[u32], batch: usize, skip: &BTreeSet<usize>) -> Result<Array2<f32>> {
        let mask = self.check_skip(skip)?;
        let seq = self.check_tokens(ids, batch)?;
        let cache = self.run(ids, batch, &mask, false, None)?;
        let rows: Vec<usize> = (0..batch).map(|b| b * seq + seq - 1).collect();
        Ok(self.unembed(cache.x_final.select(Axis(0), &rows).view()))
    }

    /// Logits plus the requested internal vectors. Capturing never changes
    /// the logits.
    pub fn forward_capture(&self, ids: &[u32], spec: &CaptureSpec) -> Result<(Array2<f32>, Captures)> {
        let seq = self.check_tokens(ids, 1)?;
        let positions = spec.validate(seq)?;
        let mut caps = Captures::new();
        let mask = vec![false; self.cfg.n_layers];
        let cache = self.run(ids, 1, &mask, false, Some((spec, &positions, &mut caps)))?;
        Ok((self.unembed(cache.x_final.view()), caps))
    }
}

impl ToyLM {
    fn attention_backward(
        &self,
        c: &BlockCache,
        dctx: &Array2<f32>,
        batch: usize,
        seq: usize,
    ) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
        let h = self.cfg.n_heads;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        let mut dp = vec![0.0f32; seq];
        for b in 0..batch {
            for head in 0..h {
                let cols = head * dh..(head + 1) * dh;
                for i in 0..seq {
                    let ri = b * seq + i;
                    let base = ((b * h + head) * seq + i) * seq;
                    let probs = &c.probs[base..base + i + 1];
                    let dci = dctx.slice(s![ri, cols.clone()]);
                    let mut weighted = 0.0f32;
                    for j in 0..=i {
                        let rj = b * seq + j;
                        dp[j] = dci.dot(&c.v.slice(s![rj, cols.clone()]));
                        weighted += probs[j] * dp[j];
                        dv.slice_mut(s![rj, cols.clone()]).scaled_add(probs[j], &dci);
                    }
                    for j in 0..=i {
                        let rj = b * seq + j;
                        let ds = probs[j] * (dp[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        dq.slice_mut(s![ri, cols.clone()]).scaled_add(ds, &c.k.slice(s![rj, cols.clone()]));
                        dk.slice_mut(s![rj, cols.clone()]).scaled_add(ds, &c.q.slice(s![ri, cols.clone()]));
                    }
                }
            }
        }
        (dq, dk, dv)
    }

    /// Mean cross-entropy of `targets[(row, token)]` predictions, where
    /// `row` indexes the packed `batch x seq` positions, with gradients of
    /// every parameter. Returns `(loss, accuracy, grads)`.
    pub fn loss_and_grad(&self, ids: &[u32], batch: usize, targets: &[(usize, u32)]) -> Result<(f64, f64, Params)> {
        let seq = self.check_tokens(ids, batch)?;
        if targets.is_empty() {
            return Err(Error::Dimension("no prediction targets".into()));
        }
        let mask = vec![false; self.cfg.n_layers];
        let cache = self.run(ids, batch, &mask, true, None)?;
        let p = &self.params;
        let mut g = Params::zeros(&self.cfg);
        let eps = self.cfg.norm_eps;

        let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let x_sel = cache.x_final.select(Axis(0), &rows);
        let r_sel: Vec<f32> = rows.iter().map(|&r| cache.r_final[r]).collect();
        let (normed, _) = rms_norm(&x_sel, &p.final_norm, eps);
        let mut dlogits = normed.dot(&p.unembed);
        let m = targets.len() as f32;
        let mut loss = 0.0f64;
        let mut correct = 0usize;
        for (mut row, &(_, tgt)) in dlogits.rows_mut().into_iter().zip(targets) {
            let tgt = tgt as usize;
            let (arg, &max) = row
                .iter()
                .enumerate()
                .fold((0, &f32::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            if arg == tgt {
                correct += 1;
            }
            let z: f32 = row.iter().map(|v| (v - max).exp()).sum();
            loss += (z.ln() + max - row[tgt]) as f64;
            row.mapv_inplace(|v| (v - max).exp() / z / m);
            row[tgt] -= 1.0 / m;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                loss,
            });
        }
        g.unembed = normed.t().dot(&dlogits);
        let dnormed = dlogits.dot(&p.unembed.t());
        let dx_sel = rms_norm_backward(&x_sel, &r_sel, &p.final_norm, &dnormed, &mut g.final_norm);
        let mut dx = Array2::<f32>::zeros(cache.x_final.raw_dim());
        for (k, &r) in rows.iter().enumerate() {
            let mut dst = dx.row_mut(r);
            dst += &dx_sel.row(k);
        }

        for li in (0..self.cfg.n_layers).rev() {
            let c = cache.blocks[li].as_ref().expect("cache kept for every block");
            let bp = &p.blocks[li];
            let gb = &mut g.blocks[li];
            // MLP branch.
            gb.w_down = c.act.t().dot(&dx);
            let mut dup = dx.dot(&bp.w_down.t());
            dup.zip_mut_with(&c.up, |d, u| *d *= gelu_grad(*u));
            gb.w_up = c.h2.t().dot(&dup);
            let dh2 = dup.dot(&bp.w_up.t());
            let dmid = rms_norm_backward(&c.x_mid, &c.r2, &bp.mlp_norm, &dh2, &mut gb.mlp_norm);
            dx += &dmid;
            // Attention branch.
            gb.wo = c.ctx.t().dot(&dx);
            let dctx = dx.dot(&bp.wo.t());
            let (mut dq, mut dk, dv) = self.attention_backward(c, &dctx, batch, seq);
            self.rope.apply(&mut dq, seq, self.cfg.n_heads, true);
            self.rope.apply(&mut dk, seq, self.cfg.n_heads, true);
            gb.wq = c.h1.t().dot(&dq);
            gb.wk = c.h1.t().dot(&dk);
            gb.wv = c.h1.t().dot(&dv);
            let dh1 = dq.dot(&bp.wq.t()) + dk.dot(&bp.wk.t()) + dv.dot(&bp.wv.t());
            let din = rms_norm_backward(&c.x_in, &c.r1, &bp.attn_norm, &dh1, &mut gb.attn_norm);
            dx += &din;
        }
        for (row, &t) in ids.iter().enumerate() {
            let mut dst = g.tok_emb.row_mut(t as usize);
            dst += &dx.row(row);
        }
        Ok((loss / m as f64, correct as f64 / m as f64, g))
    }
}

impl ToyLM {
    /// Copy of the model with `block` inserted so that it becomes layer
    /// `layer` (1-based); later blocks shift up by one.
    pub fn with_inserted_block(&self, layer: usize, block: BlockParams) -> Result<ToyLM> {
        if layer == 0 || layer > self.cfg.n_layers + 1 {
            return Err(Error::Config(format!(
                "insert position {layer} outside 1..={}",
                self.cfg.n_layers + 1
            )));
        }
        let d = self.cfg.d_model;
        let f = self.cfg.d_ff;
        let ok = block.attn_norm.len() == d
            && block.mlp_norm.len() == d
            && [&block.wq, &block.wk, &block.wv, &block.wo].iter().all(|w| w.dim() == (d, d))
            && block.w_up.dim() == (d, f)
            && block.w_down.dim() == (f, d);
        if !ok {
            return Err(Error::Config("inserted block does not match the model shape".into()));
        }
        let mut cfg = self.cfg.clone();
        cfg.n_layers += 1;
        let mut params = self.params.clone();
        params.blocks.insert(layer - 1, block);
        ToyLM::from_params(cfg, params)
    }
}
