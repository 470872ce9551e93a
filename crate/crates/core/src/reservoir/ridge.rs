//! Ridge regression through the regularized normal equations.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RidgeSolution {
    /// `n_features x n_outputs`.
    pub weights: DMatrix<f64>,
    /// `|(HᵀH + λI) W - HᵀY| / |HᵀY|` in the Frobenius norm.
    pub relative_residual: f64,
}

/// Streaming accumulator of `HᵀH` and `HᵀY`.
#[derive(Clone, Debug)]
pub(crate) struct NormalEquations {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    samples: usize,
}

impl NormalEquations {
    pub(crate) fn new(n_features: usize, n_outputs: usize) -> Self {
        NormalEquations {
            gram: DMatrix::zeros(n_features, n_features),
            cross: DMatrix::zeros(n_features, n_outputs),
            samples: 0,
        }
    }

    pub(crate) fn n_samples(&self) -> usize {
        self.samples
    }

    /// Adds a block of samples: `features` is `n_features x rows` (one
    /// column per sample), `targets` is `rows x n_outputs`.
    pub(crate) fn accumulate(&mut self, features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
        if features.iter().any(|x| !x.is_finite()) || targets.iter().any(|x| !x.is_finite()) {
            return Err(Error::Training("non-finite reservoir activations or targets".into()));
        }
        let transposed = features.transpose();
        self.gram.gemm(1.0, features, &transposed, 1.0);
        self.cross.gemm(1.0, features, targets, 1.0);
        self.samples += features.ncols();
        Ok(())
    }

    pub(crate) fn solve(&self, lambda: f64) -> Result<RidgeSolution> {
        let n = self.gram.nrows();
        let mut system = self.gram.clone();
        for i in 0..n {
            system[(i, i)] += lambda;
        }
        let chol = Cholesky::new(system.clone()).ok_or_else(|| {
            Error::Training(format!(
                "regularized Gram matrix is not positive definite (lambda = {lambda:e})"
            ))
        })?;
        let mut weights = chol.solve(&self.cross);
        let scale = self.cross.norm().max(f64::MIN_POSITIVE);
        let mut residual = &self.cross - &system * &weights;
        let mut rel = residual.norm() / scale;
        // Iterative refinement for ill-conditioned systems.
        for _ in 0..4 {
            if rel <= 1e-12 {
                break;
            }
            let candidate = &weights + chol.solve(&residual);
            let next = &self.cross - &system * &candidate;
            let next_rel = next.norm() / scale;
            if next_rel >= rel {
                break;
            }
            weights = candidate;
            residual = next;
            rel = next_rel;
        }
        if weights.iter().any(|x| !x.is_finite()) {
            return Err(Error::Training("ridge solution is not finite".into()));
        }
        Ok(RidgeSolution {
            weights,
            relative_residual: rel,
        })
    }
}

/// Minimizer of `|H W - Y|² + λ|W|²` for `H` with one sample per row.
pub fn solve_ridge(h: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeSolution> {
    if h.nrows() != y.nrows() {
        return Err(Error::Training("feature and target row counts differ".into()));
    }
    if h.nrows() == 0 {
        return Err(Error::Training("no samples".into()));
    }
    let mut eq = NormalEquations::new(h.ncols(), y.ncols());
    eq.accumulate(&h.transpose(), y)?;
    eq.solve(lambda)
}
