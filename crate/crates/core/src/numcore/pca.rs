use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use super::Matrix;
use crate::error::{Error, Result};

/// Result of a principal-component projection.
///
/// Data is centered per column before decomposition; the column means are
/// kept so projections can be inverted.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `k x d`, orthonormal rows.
    pub components: Matrix,
    /// `n x k`, `(X - mean) · componentsᵀ`.
    pub projected: Matrix,
    /// Sample variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// `mean + projected · components`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut out = self.projected.dot(self.components.as_array());
        out += &self.mean;
        out
    }
}

/// Project `x` (n x d) onto its top `k` principal components.
///
/// Components come from the eigendecomposition of the covariance (or of the
/// Gram matrix when `n < d`). Each component's sign is fixed so that its
/// largest-magnitude coordinate is positive.
pub fn pca_project(x: &Matrix, k: usize) -> Result<Pca> {
    let (n, d) = (x.nrows(), x.ncols());
    if k == 0 || k > n.min(d) {
        return Err(Error::Dimension(format!(
            "k = {k} outside 1..={} for a {n}x{d} matrix",
            n.min(d)
        )));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 1");
    let centered = x.as_array() - &mean;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };

    let (eigvals, mut comps) = if d <= n {
        let cov = centered.t().dot(&centered);
        let (vals, vecs) = sym_eigen_desc(&cov);
        let comps: Vec<Array1<f64>> = (0..k).map(|i| vecs.column(i).to_owned()).collect();
        (vals, comps)
    } else {
        let gram = centered.dot(&centered.t());
        let (vals, vecs) = sym_eigen_desc(&gram);
        let scale = vals.first().copied().unwrap_or(0.0).max(1.0);
        let mut comps = Vec::with_capacity(k);
        for i in 0..k {
            if vals[i] > 1e-10 * scale {
                let v = centered.t().dot(&vecs.column(i));
                let norm = v.dot(&v).sqrt();
                comps.push(v / norm);
            } else {
                break;
            }
        }
        (vals, comps)
    };

    complete_orthonormal(&mut comps, k, d);
    for c in comps.iter_mut() {
        fix_sign(c);
    }

    let mut components = Array2::zeros((k, d));
    for (i, c) in comps.iter().enumerate() {
        components.row_mut(i).assign(c);
    }
    let projected = centered.dot(&components.t());
    let explained_variance = (0..k)
        .map(|i| eigvals.get(i).copied().unwrap_or(0.0).max(0.0) / denom)
        .collect();

    Ok(Pca {
        mean,
        components: Matrix::from_array(components)?,
        projected: Matrix::from_array(projected)?,
        explained_variance,
    })
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
fn sym_eigen_desc(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let m = a.nrows();
    let dm = DMatrix::from_fn(m, m, |i, j| a[[i, j]]);
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..m).collect();
    // stable on ties so the result does not depend on sort internals
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = Array2::zeros((m, m));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..m {
            vecs[[row, col]] = eig.eigenvectors[(row, src)];
        }
    }
    (vals, vecs)
}

/// Extend `comps` to `k` orthonormal vectors using the standard basis.
fn complete_orthonormal(comps: &mut Vec<Array1<f64>>, k: usize, d: usize) {
    let mut axis = 0;
    while comps.len() < k && axis < d {
        let mut v = Array1::zeros(d);
        v[axis] = 1.0;
        axis += 1;
        for c in comps.iter() {
            let p = c.dot(&v);
            v.scaled_add(-p, c);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            comps.push(v / norm);
        }
    }
}

fn fix_sign(v: &mut Array1<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        // first index wins on equal magnitude
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}
