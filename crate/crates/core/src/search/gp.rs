use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SearchError;

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

/// Squared-exponential kernel `s2 * exp(-|a - b|^2 / (2 l^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Exact GP regression with a constant prior mean equal to the mean of the
/// observed values.
#[derive(Clone, Debug)]
pub struct Gp {
    pub kernel: Kernel,
    points: Vec<Vec<f64>>,
    prior_mean: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    centered: DVector<f64>,
    alpha: DVector<f64>,
    /// Diagonal jitter that was needed on top of the noise variance.
    pub jitter: f64,
}

impl Gp {
    pub fn fit(points: &[Vec<f64>], values: &[f64], kernel: Kernel) -> Result<Self, SearchError> {
        let n = points.len();
        if n == 0 || n != values.len() {
            return Err(SearchError::Empty);
        }
        let prior_mean = values.iter().sum::<f64>() / n as f64;
        let base = DMatrix::from_fn(n, n, |i, j| kernel.eval(&points[i], &points[j]))
            + DMatrix::identity(n, n) * kernel.noise_variance;
        let mut jitter = 0.0;
        let chol = loop {
            let k = &base + DMatrix::identity(n, n) * jitter;
            if let Some(c) = k.cholesky() {
                break c;
            }
            jitter = if jitter == 0.0 {
                JITTER_START
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(SearchError::SingularKernel {
                    jitter: jitter / 10.0,
                });
            }
        };
        let centered = DVector::from_iterator(n, values.iter().map(|v| v - prior_mean));
        let alpha = chol.solve(&centered);
        Ok(Self {
            kernel,
            points: points.to_vec(),
            prior_mean,
            chol,
            centered,
            alpha,
            jitter,
        })
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    /// Posterior `(mean, variance)` of the latent function at `z`.
    pub fn posterior(&self, z: &[f64]) -> (f64, f64) {
        let n = self.points.len();
        let ks = DVector::from_iterator(n, self.points.iter().map(|p| self.kernel.eval(p, z)));
        let mean = self.prior_mean + ks.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&ks)
            .expect("Cholesky factor is invertible");
        let var = (self.kernel.signal_variance - v.dot(&v)).max(0.0);
        (mean, var)
    }

    /// Log marginal likelihood of the centered observations.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.points.len() as f64;
        let l = self.chol.l();
        let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        -0.5 * self.centered.dot(&self.alpha)
            - 0.5 * log_det
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}
