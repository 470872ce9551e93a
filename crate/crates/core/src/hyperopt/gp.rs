//! Gaussian-process regression with a squared-exponential ARD kernel on
//! unit-cube inputs and standardised outputs.

use nalgebra::{DMatrix, DVector};

const JITTER: f64 = 1e-10;
const LOG_LENGTH_BOUNDS: (f64, f64) = (-4.6, 2.3);
const LOG_NOISE_BOUNDS: (f64, f64) = (-18.4, -0.7);

#[derive(Clone, Debug)]
pub(crate) struct Gp {
    x: Vec<Vec<f64>>,
    length: Vec<f64>,
    chol: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_std: f64,
}

fn kernel(a: &[f64], b: &[f64], length: &[f64]) -> f64 {
    let d2: f64 = a
        .iter()
        .zip(b)
        .zip(length)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    (-0.5 * d2).exp()
}

/// Negative log marginal likelihood and the factorisation it used.
fn fit_once(
    x: &[Vec<f64>],
    y: &DVector<f64>,
    length: &[f64],
    noise: f64,
) -> Option<(f64, nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>, DVector<f64>)> {
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel(&x[i], &x[j], length) + if i == j { noise + JITTER } else { 0.0 }
    });
    let chol = k.cholesky()?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let nll = 0.5 * y.dot(&alpha) + log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    nll.is_finite().then_some((nll, chol, alpha))
}

impl Gp {
    /// Fits length scales and noise by coordinate search on the marginal
    /// likelihood. Deterministic.
    pub(crate) fn fit(x: Vec<Vec<f64>>, y: &[f64]) -> Option<Gp> {
        let n = y.len();
        if n == 0 {
            return None;
        }
        let dim = x[0].len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_std));

        // theta = [log lengths..., log noise]
        let mut theta: Vec<f64> = vec![(0.3f64).ln(); dim];
        theta.push((1e-4f64).ln());
        let eval = |t: &[f64]| {
            let length: Vec<f64> = t[..dim].iter().map(|v| v.exp()).collect();
            fit_once(&x, &ys, &length, t[dim].exp()).map(|r| r.0)
        };
        let mut best = eval(&theta).unwrap_or(f64::INFINITY);
        let mut step = 1.0;
        while step > 0.05 {
            let mut improved = false;
            for c in 0..=dim {
                let (lo, hi) = if c < dim { LOG_LENGTH_BOUNDS } else { LOG_NOISE_BOUNDS };
                for dir in [-1.0, 1.0] {
                    let mut trial = theta.clone();
                    trial[c] = (trial[c] + dir * step).clamp(lo, hi);
                    if trial[c] == theta[c] {
                        continue;
                    }
                    if let Some(v) = eval(&trial) {
                        if v < best - 1e-12 {
                            best = v;
                            theta = trial;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }

        let length: Vec<f64> = theta[..dim].iter().map(|v| v.exp()).collect();
        let mut noise = theta[dim].exp();
        // Fall back to more noise if the chosen point is ill-conditioned.
        loop {
            if let Some((_, chol, alpha)) = fit_once(&x, &ys, &length, noise) {
                return Some(Gp {
                    x,
                    length,
                    chol,
                    alpha,
                    y_mean,
                    y_std,
                });
            }
            noise *= 10.0;
            if noise > 1.0 {
                return None;
            }
        }
    }

    /// Posterior mean and standard deviation in standardised units.
    pub(crate) fn predict_std(&self, p: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, p, &self.length)));
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (1.0 - v.norm_squared()).max(1e-12);
        (mean, var.sqrt())
    }

    pub(crate) fn standardise(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    #[cfg(test)]
    pub(crate) fn predict(&self, p: &[f64]) -> (f64, f64) {
        let (m, s) = self.predict_std(p);
        (self.y_mean + self.y_std * m, self.y_std * s)
    }
}

/// Expected improvement over `best` for maximisation.
pub(crate) fn expected_improvement(mean: f64, sd: f64, best: f64, xi: f64) -> f64 {
    let imp = mean - best - xi;
    if sd <= 0.0 {
        return imp.max(0.0);
    }
    let z = imp / sd;
    let cdf = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    imp * cdf + sd * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_smooth_function() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 8.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin()).collect();
        let gp = Gp::fit(x.clone(), &y).unwrap();
        for (p, v) in x.iter().zip(&y) {
            let (m, s) = gp.predict(p);
            assert!((m - v).abs() < 1e-2, "{m} vs {v}");
            assert!(s < 0.05);
        }
        let (m, _) = gp.predict(&[0.3125]);
        assert!((m - (3.0f64 * 0.3125).sin()).abs() < 0.02);
    }

    #[test]
    fn uncertainty_grows_away_from_data() {
        let x = vec![vec![0.1], vec![0.2]];
        let gp = Gp::fit(x, &[1.0, 1.2]).unwrap();
        assert!(gp.predict(&[0.9]).1 > gp.predict(&[0.15]).1);
    }

    #[test]
    fn ei_reference_values() {
        // At zero improvement EI = sd * phi(0).
        let v = expected_improvement(1.0, 2.0, 1.0, 0.0);
        assert!((v - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert_eq!(expected_improvement(0.5, 0.0, 1.0, 0.0), 0.0);
        assert!(expected_improvement(2.0, 0.1, 1.0, 0.0) > 0.99);
    }
}
