//! Bayesian optimization over the latent space: a Gaussian-process
//! surrogate of the fit score, expected improvement as the acquisition
//! function, and greedy decoding of every candidate.

mod bo;
mod gp;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::eqdag::EquationDag;
use crate::eqgen::{Dataset, Interval};

pub use self::bo::{
    discover, maximize, write_trajectory_csv, DiscoveryReport, DiscoveryResult, Observation,
    TraceEntry, Winner,
};
pub use self::gp::{Gp, Kernel};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("kernel matrix is singular even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("no observations")]
    Empty,
    #[error(transparent)]
    Model(#[from] crate::cvae::CvaeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub iterations: usize,
    pub trials: usize,
    pub init_points: usize,
    /// Search interval applied to every latent coordinate.
    pub bounds: Interval,
    pub length_scale: f64,
    /// Prior variance of the score. A quantity confined to [0, 1] has
    /// variance at most 0.25.
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Random EI candidates per round before local polishing.
    pub candidates: usize,
    /// Re-select the length-scale from a small grid by marginal likelihood
    /// every 5 observations.
    pub refit_length_scale: bool,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            trials: 10,
            init_points: 5,
            bounds: Interval::new(-3.0, 3.0),
            length_scale: 1.0,
            signal_variance: 0.25,
            noise_variance: 1e-6,
            candidates: 1024,
            refit_length_scale: false,
            seed: 0,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let b = self.bounds;
        if !(b.low.is_finite() && b.high.is_finite() && b.low < b.high) {
            return Err(SearchError::InvalidConfig(
                "search box must be finite and nonempty".into(),
            ));
        }
        if self.trials == 0 {
            return Err(SearchError::InvalidConfig(
                "trials must be at least 1".into(),
            ));
        }
        if self.init_points + self.iterations == 0 {
            return Err(SearchError::InvalidConfig(
                "a trial needs at least one evaluation".into(),
            ));
        }
        if !(self.length_scale > 0.0 && self.signal_variance > 0.0 && self.noise_variance >= 0.0) {
            return Err(SearchError::InvalidConfig(
                "kernel parameters must be positive".into(),
            ));
        }
        if self.candidates == 0 {
            return Err(SearchError::InvalidConfig(
                "candidates must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fraction of rows that must evaluate cleanly for an equation to be scored.
pub const MIN_CLEAN_FRACTION: f64 = 0.9;

/// Mean squared error over rows where the equation is defined, or `None`
/// when the DAG is invalid or defined on fewer than 90% of the rows.
pub fn mse(dag: &EquationDag, ds: &Dataset) -> Option<f64> {
    let program = dag.compile().ok()?;
    if ds.is_empty() {
        return None;
    }
    let mut scratch = Vec::new();
    let (mut sum, mut clean) = (0.0, 0usize);
    for (x, y) in ds.x.iter().zip(&ds.y) {
        if let Ok(v) = program.eval_into(x, &mut scratch) {
            sum += (v - y) * (v - y);
            clean += 1;
        }
    }
    if clean == 0 || (clean as f64) < MIN_CLEAN_FRACTION * ds.len() as f64 {
        return None;
    }
    Some(sum / clean as f64)
}

/// Fit score `1 / (1 + MSE)`; 0 for invalid or mostly undefined equations.
pub fn score(dag: &EquationDag, ds: &Dataset) -> f64 {
    match mse(dag, ds) {
        Some(m) if m.is_finite() => score_from_mse(m),
        _ => 0.0,
    }
}

pub fn score_from_mse(mse: f64) -> f64 {
    1.0 / (1.0 + mse)
}

/// Expected improvement over `best` for maximization.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let diff = mean - best;
    if sigma <= 1e-12 {
        return diff.max(0.0);
    }
    let n = Normal::standard();
    let u = diff / sigma;
    (diff * n.cdf(u) + sigma * n.pdf(u)).max(0.0)
}
