//! Representational similarity and Fourier analyses of embedding tables.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::actstore::{ActivationSet, Site};
use crate::error::{Error, Result};
use crate::numcore::{pairwise_cosine, pca_project, rfft_magnitude, spearman_rho, Matrix, SeedStream, SpectralProfile};

pub const DEFAULT_PCA_DIMS: usize = 64;
pub const DEFAULT_TOP_K: usize = 63;

/// Embedding vectors keyed by token (number values or shared word pieces).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub model_id: String,
    pub keys: Vec<String>,
    pub vectors: Matrix,
}

impl EmbeddingTable {
    pub fn new(model_id: impl Into<String>, keys: Vec<String>, vectors: Matrix) -> Result<Self> {
        if keys.len() != vectors.nrows() {
            return Err(Error::Dimension(format!("{} keys for {} rows", keys.len(), vectors.nrows())));
        }
        let unique: BTreeSet<&String> = keys.iter().collect();
        if unique.len() != keys.len() {
            return Err(Error::Alignment("duplicate keys in embedding table".into()));
        }
        Ok(EmbeddingTable {
            model_id: model_id.into(),
            keys,
            vectors,
        })
    }

    /// Table keyed by number value, for rows of an embedding dump.
    pub fn from_activations(set: &ActivationSet) -> Result<Self> {
        if !matches!(set.site, Site::Embedding | Site::OutputEmbedding) {
            return Err(Error::Schema(format!("site {} is not an embedding table", set.site)));
        }
        let numeric = set.numeric_rows();
        let keys = numeric.labels.iter().map(|l| l.to_string()).collect();
        EmbeddingTable::new(set.model_id.clone(), keys, numeric.vectors)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Rows reordered to follow `keys`; every key must be present.
    pub fn restrict(&self, keys: &[String]) -> Result<Self> {
        let pos: BTreeMap<&String, usize> = self.keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let idx = keys
            .iter()
            .map(|k| {
                pos.get(k)
                    .copied()
                    .ok_or_else(|| Error::Alignment(format!("key {k:?} missing from {}", self.model_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingTable::new(self.model_id.clone(), keys.to_vec(), self.vectors.select_rows(&idx))
    }

    /// Rows ordered by numeric value when the keys are exactly `0..n`.
    pub fn value_ordered(&self) -> Result<Matrix> {
        let n = self.len();
        let mut idx = vec![usize::MAX; n];
        for (row, k) in self.keys.iter().enumerate() {
            let v: usize = k
                .parse()
                .map_err(|_| Error::Alignment(format!("key {k:?} is not a number")))?;
            if v >= n || idx[v] != usize::MAX || k != &v.to_string() {
                return Err(Error::Alignment(format!("keys are not the contiguous integers 0..{n}")));
            }
            idx[v] = row;
        }
        Ok(self.vectors.select_rows(&idx))
    }
}

/// Spearman correlation of the two tables' condensed pairwise cosines.
pub fn rsa_score(a: &EmbeddingTable, b: &EmbeddingTable) -> Result<f64> {
    if a.keys != b.keys {
        return Err(Error::Alignment(format!(
            "{} and {} do not share a key sequence",
            a.model_id, b.model_id
        )));
    }
    if a.len() < 3 {
        return Err(Error::Dimension(format!("need at least 3 keys, got {}", a.len())));
    }
    spearman_rho(&pairwise_cosine(&a.vectors)?, &pairwise_cosine(&b.vectors)?)
}

/// PCA to `pca_dims` (capped by the table shape), DFT of each component
/// along the row axis, then the per-bin maximum over components.
pub fn spectral_profile(rows: &Matrix, pca_dims: usize) -> Result<SpectralProfile> {
    let k = pca_dims.min(rows.nrows()).min(rows.ncols());
    if k == 0 {
        return Err(Error::Dimension("empty table".into()));
    }
    let pca = pca_project(rows, k)?;
    let mut best: Option<SpectralProfile> = None;
    for col in pca.projected.axis_iter(Axis(1)) {
        let p = rfft_magnitude(&col.to_vec())?;
        best = Some(match best {
            None => p,
            Some(mut acc) => {
                for (a, m) in acc.magnitude.iter_mut().zip(p.magnitude) {
                    *a = a.max(m);
                }
                acc
            }
        });
    }
    Ok(best.expect("k >= 1"))
}

/// [`spectral_profile`] of a table keyed by the integers `0..n`, taken in
/// value order.
pub fn fourier_profile(table: &EmbeddingTable, pca_dims: usize) -> Result<SpectralProfile> {
    spectral_profile(&table.value_ordered()?, pca_dims)
}

/// Top-k frequency bins (DC excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreqSet {
    pub k: usize,
    pub bins: BTreeSet<usize>,
}

/// The `k` largest non-DC bins; equal magnitudes rank the lower bin first.
pub fn topk_freqs(profile: &SpectralProfile, k: usize) -> Result<FreqSet> {
    let n = profile.n_freqs();
    if k + 1 > n {
        return Err(Error::Config(format!("k = {k} exceeds the {} non-DC bins", n.saturating_sub(1))));
    }
    let mut order: Vec<usize> = (1..n).collect();
    order.sort_by(|&a, &b| profile.magnitude[b].total_cmp(&profile.magnitude[a]).then(a.cmp(&b)));
    Ok(FreqSet {
        k,
        bins: order.into_iter().take(k).collect(),
    })
}

fn iou(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Symmetric IoU matrix with unit diagonal.
pub fn pairwise_iou(sets: &[FreqSet]) -> Result<Array2<f64>> {
    if let Some(first) = sets.first() {
        if sets.iter().any(|s| s.k != first.k) {
            return Err(Error::Config("frequency sets have different k".into()));
        }
    }
    let n = sets.len();
    let mut out = Array2::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = iou(&sets[i].bins, &sets[j].bins);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

/// One point of the agreement-versus-k curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub k: usize,
    pub min_iou: f64,
    pub mean_iou: f64,
}

/// Minimum and mean off-diagonal IoU for every `k` in `1..=k_max`.
pub fn k_sweep(profiles: &[SpectralProfile], k_max: usize) -> Result<Vec<KPoint>> {
    (1..=k_max)
        .map(|k| {
            let sets = profiles.iter().map(|p| topk_freqs(p, k)).collect::<Result<Vec<_>>>()?;
            let m = pairwise_iou(&sets)?;
            let n = sets.len();
            let mut off = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    off.push(m[[i, j]]);
                }
            }
            let (min_iou, mean_iou) = if off.is_empty() {
                (1.0, 1.0)
            } else {
                (
                    off.iter().copied().fold(f64::INFINITY, f64::min),
                    off.iter().sum::<f64>() / off.len() as f64,
                )
            };
            Ok(KPoint { k, min_iou, mean_iou })
        })
        .collect()
}

/// Largest `k <= k_max` at which every pair of profiles agrees exactly on
/// its top-k bins; 0 if none.
pub fn optimal_k(profiles: &[SpectralProfile], k_max: usize) -> Result<usize> {
    let sweep = k_sweep(profiles, k_max)?;
    Ok(sweep.iter().rev().find(|p| p.min_iou == 1.0).map_or(0, |p| p.k))
}

/// `n` keys drawn without replacement from the keys all tables share,
/// returned in sampled order. The control condition for number analyses.
pub fn random_piece_keys(tables: &[EmbeddingTable], n: usize, seed: u64) -> Result<Vec<String>> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Config("no tables to sample from".into()))?;
    let mut shared: BTreeSet<&String> = first.keys.iter().collect();
    for t in &tables[1..] {
        let keys: BTreeSet<&String> = t.keys.iter().collect();
        shared = shared.intersection(&keys).copied().collect();
    }
    if shared.len() < n {
        return Err(Error::Alignment(format!("only {} shared keys, need {n}", shared.len())));
    }
    let pool: Vec<&String> = shared.into_iter().collect();
    let mut rng = SeedStream::new(seed).rng("random_pieces");
    Ok(sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i].clone()).collect())
}
