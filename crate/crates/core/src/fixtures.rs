//! Synthetic data with known structure, shared by tests, benchmarks and the
//! command line `--synthetic` inputs.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::actstore::{ActivationSet, RowMeta, Site};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, SeedStream};
use crate::probes::sin_encoding;

/// Haar-random orthogonal `d x d` matrix (QR of a gaussian matrix with the
/// sign of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal<R: Rng>(d: usize, rng: &mut R) -> Array2<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    Array2::from_shape_fn((d, d), |(i, j)| {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinusoidalFixture {
    pub n_classes: usize,
    pub d_model: usize,
    pub n_features: usize,
    pub per_value: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SinusoidalFixture {
    fn default() -> Self {
        SinusoidalFixture {
            n_classes: 1000,
            d_model: 64,
            n_features: 64,
            per_value: 8,
            noise: 0.01,
            seed: 0,
        }
    }
}

/// Rows `x = R enc(c) + e` with `R` a random orthogonal embedding of the
/// `m` basis features into `d` dimensions and `e ~ N(0, noise^2)`.
pub fn sinusoidal_activations(spec: &SinusoidalFixture) -> Result<ActivationSet> {
    let (c, d, m) = (spec.n_classes, spec.d_model, spec.n_features);
    if m > d || m % 2 != 0 || m == 0 {
        return Err(Error::Config(format!("need an even basis width <= d_model, got {m} for d={d}")));
    }
    let seeds = SeedStream::new(spec.seed);
    let r = random_orthogonal(d, &mut seeds.rng("fixture/rotation"));
    let mut rng = seeds.rng("fixture/noise");
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let n = c * spec.per_value;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);
    for value in 0..c {
        let enc = sin_encoding(value, m);
        for k in 0..spec.per_value {
            for i in 0..d {
                let clean: f64 = (0..m).map(|j| r[[i, j]] * enc[j]).sum();
                data.push(clean + noise.sample(&mut rng));
            }
            labels.push(value as i64);
            meta.push(RowMeta {
                sample_id: (value * spec.per_value + k) as u64,
                token_offset: 0,
                context_type: "synthetic".into(),
                prompt_id: format!("synthetic-{value:04}-{k:03}"),
                layer: 1,
                site: Site::ResidualOut,
            });
        }
    }
    Ok(ActivationSet {
        model_id: "synthetic-sinusoidal".into(),
        n_layers: 1,
        layer: 1,
        site: Site::ResidualOut,
        vectors: Matrix::new(n, d, data)?,
        labels,
        meta,
    })
}

/// Table of `n` rows whose row `v` carries `amp * sin(2π bin v / n)` for each
/// planted `(bin, amp)`, rotated into `d` dimensions by a random orthogonal
/// map. Keys are `"0".."n-1"`.
pub fn planted_frequency_table(
    model_id: &str,
    n: usize,
    d: usize,
    planted: &[(usize, f64)],
    seed: u64,
) -> Result<crate::spectra::EmbeddingTable> {
    if planted.len() > d {
        return Err(Error::Config(format!("{} planted frequencies exceed d = {d}", planted.len())));
    }
    let r = random_orthogonal(d, &mut SeedStream::new(seed).rng("fixture/planted"));
    let mut data = Vec::with_capacity(n * d);
    for v in 0..n {
        let raw: Vec<f64> = planted
            .iter()
            .map(|&(bin, amp)| amp * (2.0 * std::f64::consts::PI * (bin * v) as f64 / n as f64).sin())
            .collect();
        for i in 0..d {
            data.push(raw.iter().enumerate().map(|(j, x)| r[[i, j]] * x).sum());
        }
    }
    crate::spectra::EmbeddingTable::new(model_id, (0..n).map(|v| v.to_string()).collect(), Matrix::new(n, d, data)?)
}

/// Two tables whose ten strongest frequencies coincide (same bins, same
/// amplitude order) and whose next five are disjoint, so their top-k sets
/// agree exactly for `k <= 10` and never for `k = 11..=63`.
pub fn shared_top10_tables(seed: u64) -> Result<(crate::spectra::EmbeddingTable, crate::spectra::EmbeddingTable)> {
    let shared = [3usize, 8, 13, 21, 34, 55, 89, 144, 233, 377];
    let mut a: Vec<(usize, f64)> = shared.iter().enumerate().map(|(i, &b)| (b, 20.0 - i as f64)).collect();
    let mut b = a.clone();
    for i in 0..5 {
        a.push((40 + i, 5.0 - 0.5 * i as f64));
        b.push((70 + i, 5.0 - 0.5 * i as f64));
    }
    Ok((
        planted_frequency_table("shared-a", 1000, 64, &a, seed)?,
        planted_frequency_table("shared-b", 1000, 64, &b, seed + 1)?,
    ))
}

/// Signal weight of the chunk `o` positions before the last numeric token
/// in [`superposition_activations`]; strictly decreasing in `o`.
pub const SUPERPOSITION_WEIGHTS: [f64; 6] = [1.0, 0.9, 0.45, 0.3, 0.2, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperpositionFixture {
    pub n_samples: usize,
    pub n_features: usize,
    pub max_chunks: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SuperpositionFixture {
    fn default() -> Self {
        SuperpositionFixture {
            n_samples: 12_000,
            n_features: 64,
            max_chunks: 6,
            noise: 0.15,
            seed: 0,
        }
    }
}

/// Last-token states of multi-token numbers: `h = Σ_o w_o R_o enc(chunk_o)
/// + e`, where `R_o` are mutually orthogonal `d x m` blocks of one random
/// rotation (`d = m * max_chunks`) and `w_o` are [`SUPERPOSITION_WEIGHTS`].
/// Returns the states and each row's chunk sequence, most significant first.
pub fn superposition_activations(spec: &SuperpositionFixture) -> Result<(ActivationSet, Vec<Vec<u16>>)> {
    let m = spec.n_features;
    if spec.max_chunks == 0 || spec.max_chunks > SUPERPOSITION_WEIGHTS.len() || m == 0 || m % 2 != 0 {
        return Err(Error::Config(format!(
            "max_chunks must be in 1..={} and n_features even",
            SUPERPOSITION_WEIGHTS.len()
        )));
    }
    let d = m * spec.max_chunks;
    let seeds = SeedStream::new(spec.seed);
    let r = random_orthogonal(d, &mut seeds.rng("fixture/superposition"));
    let mut rng = seeds.rng("fixture/superposition/samples");
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(spec.n_samples * d);
    let mut chunks_out = Vec::with_capacity(spec.n_samples);
    let mut meta = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let len = rng.random_range(1..=spec.max_chunks);
        let chunks: Vec<u16> = (0..len).map(|_| rng.random_range(0..1000u16)).collect();
        let mut h = vec![0.0; d];
        for o in 0..len {
            let enc = sin_encoding(chunks[len - 1 - o] as usize, m);
            let w = SUPERPOSITION_WEIGHTS[o];
            for (row, hv) in h.iter_mut().enumerate() {
                *hv += w * (0..m).map(|j| r[[row, o * m + j]] * enc[j]).sum::<f64>();
            }
        }
        data.extend(h.into_iter().map(|v| v + noise.sample(&mut rng)));
        meta.push(RowMeta {
            sample_id: i as u64,
            token_offset: len as i64 - 1,
            context_type: "synthetic".into(),
            prompt_id: format!("superposition-{i:05}"),
            layer: 1,
            site: Site::ResidualOut,
        });
        chunks_out.push(chunks);
    }
    let labels = chunks_out.iter().map(|c| *c.last().unwrap() as i64).collect();
    let set = ActivationSet {
        model_id: "synthetic-superposition".into(),
        n_layers: 1,
        layer: 1,
        site: Site::ResidualOut,
        vectors: Matrix::new(spec.n_samples, d, data)?,
        labels,
        meta,
    };
    Ok((set, chunks_out))
}
