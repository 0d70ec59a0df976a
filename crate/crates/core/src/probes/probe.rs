use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::basis::SinBasis;
use crate::error::{Error, Result};
use crate::numcore::train::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Sin,
    Linear,
    Mlp,
}

impl ProbeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeKind::Sin => "sin",
            ProbeKind::Linear => "linear",
            ProbeKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sin" => Ok(ProbeKind::Sin),
            "linear" => Ok(ProbeKind::Linear),
            "mlp" => Ok(ProbeKind::Mlp),
            other => Err(Error::Config(format!("unknown probe kind {other:?}"))),
        }
    }
}

fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || n.sample(rng))
}

/// `logits_c = <enc(c), W_out^T (W_in x)>`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SinProbe {
    /// `q x d`
    pub w_in: Array2<f64>,
    /// `q x m`
    pub w_out: Array2<f64>,
    pub basis: SinBasis,
}

impl SinProbe {
    pub fn new<R: Rng>(d: usize, q: usize, basis: SinBasis, rng: &mut R) -> Self {
        let m = basis.n_features();
        SinProbe {
            w_in: gaussian(q, d, 1.0 / (d as f64).sqrt(), rng),
            w_out: gaussian(q, m, 1.0 / (q as f64).sqrt(), rng),
            basis,
        }
    }

    /// Per-row features `W_out^T W_in x`, before pairing with the basis.
    pub fn features(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w_in.t()).dot(&self.w_out)
    }
}

impl Classifier for SinProbe {
    fn n_classes(&self) -> usize {
        self.basis.n_classes()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.features(x).dot(&self.basis.matrix().t())
    }

    fn grads(&self, x: ArrayView2<f64>, g: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let h = x.dot(&self.w_in.t());
        let df = g.dot(self.basis.matrix());
        let dw_out = h.t().dot(&df);
        let dh = df.dot(&self.w_out.t());
        let dw_in = dh.t().dot(&x);
        vec![dw_in, dw_out]
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w_in, &self.w_out]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w_in, &mut self.w_out]
    }
}

/// Affine map `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `d x C`
    pub w: Array2<f64>,
    /// `1 x C`
    pub b: Array2<f64>,
}

impl LinearProbe {
    pub fn new<R: Rng>(d: usize, n_classes: usize, rng: &mut R) -> Self {
        LinearProbe {
            w: gaussian(d, n_classes, 1.0 / (d as f64).sqrt(), rng),
            b: Array2::zeros((1, n_classes)),
        }
    }
}

impl Classifier for LinearProbe {
    fn n_classes(&self) -> usize {
        self.w.ncols()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    fn grads(&self, x: ArrayView2<f64>, g: ArrayView2<f64>) -> Vec<Array2<f64>> {
        vec![x.t().dot(&g), g.sum_axis(Axis(0)).insert_axis(Axis(0))]
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x.powi(3))).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x.powi(3))).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// One GELU hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProbe {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

impl MlpProbe {
    pub fn new<R: Rng>(d: usize, hidden: usize, n_classes: usize, rng: &mut R) -> Self {
        MlpProbe {
            w1: gaussian(d, hidden, 1.0 / (d as f64).sqrt(), rng),
            b1: Array2::zeros((1, hidden)),
            w2: gaussian(hidden, n_classes, 1.0 / (hidden as f64).sqrt(), rng),
            b2: Array2::zeros((1, n_classes)),
        }
    }

    fn pre_activation(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w1) + &self.b1
    }
}

impl Classifier for MlpProbe {
    fn n_classes(&self) -> usize {
        self.w2.ncols()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.pre_activation(x).mapv(gelu).dot(&self.w2) + &self.b2
    }

    fn grads(&self, x: ArrayView2<f64>, g: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let pre = self.pre_activation(x);
        let act = pre.mapv(gelu);
        let dw2 = act.t().dot(&g);
        let db2 = g.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dpre = g.dot(&self.w2.t());
        dpre.zip_mut_with(&pre, |d, p| *d *= gelu_grad(*p));
        let dw1 = x.t().dot(&dpre);
        let db1 = dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
        vec![dw1, db1, dw2, db2]
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Any of the three probe kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    Sin(SinProbe),
    Linear(LinearProbe),
    Mlp(MlpProbe),
}

impl Probe {
    pub fn kind(&self) -> ProbeKind {
        match self {
            Probe::Sin(_) => ProbeKind::Sin,
            Probe::Linear(_) => ProbeKind::Linear,
            Probe::Mlp(_) => ProbeKind::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Probe::Sin(p) => p.w_in.ncols(),
            Probe::Linear(p) => p.w.nrows(),
            Probe::Mlp(p) => p.w1.nrows(),
        }
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            Probe::Sin(p) => p,
            Probe::Linear(p) => p,
            Probe::Mlp(p) => p,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier {
        match self {
            Probe::Sin(p) => p,
            Probe::Linear(p) => p,
            Probe::Mlp(p) => p,
        }
    }

    /// Names matching `params()` order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Probe::Sin(_) => &["w_in", "w_out"],
            Probe::Linear(_) => &["w", "b"],
            Probe::Mlp(_) => &["w1", "b1", "w2", "b2"],
        }
    }

    /// Rounds every parameter to `f32`, the precision probe files store.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.mapv_inplace(|v| v as f32 as f64);
        }
    }

    /// Checked batch logits.
    pub fn try_logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "probe expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(self.logits(x))
    }
}

impl Classifier for Probe {
    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.inner().logits(x)
    }

    fn grads(&self, x: ArrayView2<f64>, g: ArrayView2<f64>) -> Vec<Array2<f64>> {
        self.inner().grads(x, g)
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        self.inner().params()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.inner_mut().params_mut()
    }
}

/// Class scores for one vector.
pub fn probe_logits(probe: &Probe, x: &[f64]) -> Result<Array1<f64>> {
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    Ok(probe.try_logits(view)?.row(0).to_owned())
}

/// Fraction of entries with `|w| > tau`.
pub fn weight_sparsity(w: &Array2<f64>, tau: f64) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    w.iter().filter(|v| v.abs() > tau).count() as f64 / w.len() as f64
}

pub const DEFAULT_SPARSITY_TAU: f64 = 1e-5;
