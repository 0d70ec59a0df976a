use std::ops::Deref;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix whose entries are guaranteed finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct Matrix(Array2<f64>);

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::from_array(arr)
    }

    pub fn from_array(arr: Array2<f64>) -> Result<Self> {
        if let Some(pos) = arr.iter().position(|v| !v.is_finite()) {
            let cols = arr.ncols().max(1);
            return Err(Error::Degenerate(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix(arr.as_standard_layout().into_owned()))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.iter().flatten().copied().collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix(Array2::zeros((rows, cols)))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Row-major copy of the entries.
    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        Matrix(self.0.select(ndarray::Axis(0), idx))
    }

    /// Stack matrices vertically. All inputs must share a column count.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = match parts.iter().find(|m| m.nrows() > 0) {
            Some(m) => m.ncols(),
            None => return Ok(Matrix::zeros(0, parts.first().map_or(0, |m| m.ncols()))),
        };
        if parts.iter().any(|m| m.nrows() > 0 && m.ncols() != cols) {
            return Err(Error::Dimension("vstack column mismatch".into()));
        }
        let views: Vec<_> = parts.iter().filter(|m| m.nrows() > 0).map(|m| m.view()).collect();
        let arr = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(Matrix(arr))
    }
}

impl Deref for Matrix {
    type Target = Array2<f64>;

    fn deref(&self) -> &Array2<f64> {
        &self.0
    }
}

impl TryFrom<Array2<f64>> for Matrix {
    type Error = Error;

    fn try_from(arr: Array2<f64>) -> Result<Self> {
        Matrix::from_array(arr)
    }
}

impl From<Matrix> for Array2<f64> {
    fn from(m: Matrix) -> Self {
        m.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Degenerate(_))
        ));
        assert!(Matrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(Matrix::new(2, 2, vec![0.0; 3]), Err(Error::Dimension(_))));
    }

    #[test]
    fn vstack_keeps_order() {
        let a = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Matrix::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = Matrix::vstack(&[&a, &Matrix::zeros(0, 2), &b]).unwrap();
        assert_eq!(s.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
