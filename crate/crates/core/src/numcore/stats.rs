use ndarray::{Array2, ArrayView1};

use super::Matrix;
use crate::error::{Error, Result};

/// Fractional ranks starting at 1, ties receive the average of their ranks.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share rank (i+1 + j) / 2
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            out[idx] = rank;
        }
        i = j;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    // sqrt(x * x) == x exactly, so identical inputs give exactly 1
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Dimension("need at least two observations".into()));
    }
    pearson(&ranks(a), &ranks(b))
        .ok_or_else(|| Error::Degenerate("constant input has zero rank variance".into()))
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
}

/// Condensed upper-triangle cosine similarities, `(0,1), (0,2), .., (n-2,n-1)`.
pub fn pairwise_cosine(x: &Matrix) -> Result<Vec<f64>> {
    let n = x.nrows();
    let mut normed: Array2<f64> = x.as_array().clone();
    for (i, mut row) in normed.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("row {i} has zero norm")));
        }
        row /= norm;
    }
    let gram = normed.dot(&normed.t());
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(gram[[i, j]].clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn average_ranks_on_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn identical_and_reversed() {
        let a = [0.3, -1.0, 2.5, 7.0, 4.0];
        assert!((spearman_rho(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mut sorted = a.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rev: Vec<f64> = sorted.iter().rev().copied().collect();
        assert!((spearman_rho(&sorted, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_value() {
        // 1 - 6·Σd²/(n(n²-1)) with Σd² = 2, n = 4
        let oracle = 1.0 - 6.0 * 2.0 / (4.0 * 15.0);
        let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - oracle).abs() < 1e-12);
        assert!((rho - 0.8).abs() < 1e-12);
    }

    #[test]
    fn constant_is_degenerate() {
        assert!(matches!(spearman_rho(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(Error::Degenerate(_))));
        assert!(matches!(spearman_rho(&[1.0], &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn cosine_examples() {
        let eye = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(pairwise_cosine(&eye).unwrap().iter().all(|v| v.abs() < 1e-7));
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(pairwise_cosine(&x).unwrap(), vec![1.0, 0.0, 0.0]);
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(pairwise_cosine(&z), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn spearman_monotone_invariance(ai in prop::collection::vec(-1000i32..1000, 3..40), seed in 0u64..1000) {
            let a: Vec<f64> = ai.iter().map(|&v| v as f64 / 10.0).collect();
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| (v * 0.37 + (i as f64 * seed as f64).sin()).round()).collect();
            if let Ok(rho) = spearman_rho(&a, &b) {
                let a2: Vec<f64> = a.iter().map(|v| (v / 100.0).exp() * 5.0 - 3.0).collect();
                let b2: Vec<f64> = b.iter().map(|v| v * v * v - 4.0).collect();
                let rho2 = spearman_rho(&a2, &b2).unwrap();
                prop_assert!((rho - rho2).abs() < 1e-9);
            }
        }

        #[test]
        fn cosine_row_scale_invariance(
            rows in prop::collection::vec(prop::collection::vec(0.1f64..5.0, 4), 2..8),
            scales in prop::collection::vec(0.01f64..100.0, 8),
        ) {
            let x = Matrix::from_rows(&rows).unwrap();
            let scaled: Vec<Vec<f64>> = rows.iter().zip(&scales).map(|(r, s)| r.iter().map(|v| v * s).collect()).collect();
            let a = pairwise_cosine(&x).unwrap();
            let b = pairwise_cosine(&Matrix::from_rows(&scaled).unwrap()).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }
}
