use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let ok = row_ptr.len() == rows + 1
            && row_ptr.first() == Some(&0)
            && row_ptr.windows(2).all(|w| w[0] <= w[1])
            && row_ptr.last() == Some(&values.len())
            && col_idx.len() == values.len()
            && col_idx.iter().all(|&c| c < cols);
        if !ok {
            return Err(Error::Format("inconsistent sparse matrix layout".into()));
        }
        Ok(CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Square matrix with each entry nonzero with probability `density`,
    /// nonzeros uniform on [-1, 1].
    pub fn random(n: usize, density: f64, rng: &mut impl Rng) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for _ in 0..n {
            for c in 0..n {
                if rng.random_bool(density) {
                    col_idx.push(c);
                    values.push(rng.random_range(-1.0..=1.0));
                }
            }
            row_ptr.push(values.len());
        }
        CsrMatrix {
            rows: n,
            cols: n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn mul_vec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.rows, |r, _| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(|k| self.values[k] * x[self.col_idx[k]])
                .sum()
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }

    /// Largest eigenvalue modulus, from a dense eigen-decomposition.
    pub fn spectral_radius(&self) -> f64 {
        if self.nnz() == 0 || self.rows != self.cols {
            return 0.0;
        }
        self.to_dense()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}
