use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular frequency of feature pair `t`: `1000^(-2t/m)`.
pub fn omega(t: usize, m: usize) -> f64 {
    (-2.0 * t as f64 * 1000f64.ln() / m as f64).exp()
}

/// `enc(c)`: `[sin(c ω_0), cos(c ω_0), sin(c ω_1), ...]`, length `m`.
pub fn sin_encoding(c: usize, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m);
    for t in 0..m / 2 {
        let a = c as f64 * omega(t, m);
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

/// Fixed `C x m` table whose row `c` is `enc(c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisParams", into = "BasisParams")]
pub struct SinBasis {
    n_classes: usize,
    n_features: usize,
    matrix: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisParams {
    pub n_classes: usize,
    pub n_features: usize,
}

impl TryFrom<BasisParams> for SinBasis {
    type Error = Error;
    fn try_from(p: BasisParams) -> Result<Self> {
        build_sin_basis(p.n_classes, p.n_features)
    }
}

impl From<SinBasis> for BasisParams {
    fn from(b: SinBasis) -> Self {
        b.params()
    }
}

pub fn build_sin_basis(n_classes: usize, n_features: usize) -> Result<SinBasis> {
    if n_features < 2 || n_features % 2 != 0 {
        return Err(Error::Config(format!("basis width must be even and >= 2, got {n_features}")));
    }
    if n_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
    }
    let mut matrix = Array2::zeros((n_classes, n_features));
    for c in 0..n_classes {
        for (j, v) in sin_encoding(c, n_features).into_iter().enumerate() {
            matrix[[c, j]] = v;
        }
    }
    Ok(SinBasis {
        n_classes,
        n_features,
        matrix,
    })
}

impl SinBasis {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn params(&self) -> BasisParams {
        BasisParams {
            n_classes: self.n_classes,
            n_features: self.n_features,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_row() {
        let b = build_sin_basis(10, 8).unwrap();
        for t in 0..4 {
            assert_eq!(b.matrix()[[0, 2 * t]], 0.0);
            assert_eq!(b.matrix()[[0, 2 * t + 1]], 1.0);
        }
    }

    #[test]
    fn rejects_odd_width() {
        assert!(matches!(build_sin_basis(10, 7), Err(Error::Config(_))));
        assert!(matches!(build_sin_basis(1, 8), Err(Error::Config(_))));
    }

    #[test]
    fn frequencies_span_one_to_thousand() {
        assert_eq!(omega(0, 64), 1.0);
        let last = omega(32, 64);
        assert!((last - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn serde_keeps_only_parameters() {
        let b = build_sin_basis(20, 6).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, r#"{"n_classes":20,"n_features":6}"#);
        let back: SinBasis = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
    }
}
