//! Fixed-length summaries of a dataset, used as the condition vector of the
//! generative model.
//!
//! Two providers exist: a least-squares polynomial fit and a
//! permutation-invariant set encoder whose `512 x 10` output is reduced by
//! a column mean or a small MLP.

mod cache;
mod poly;
mod set;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::cache::{
    read_embedding_cache, write_embedding_cache, write_embedding_cache_to, EmbeddingCache,
};
pub use self::poly::{monomial_exponents, poly_embedding, poly_features, PolyFit};
pub use self::set::{
    flatten_row_major, reduce, set_encode, MlpReducer, SetEncoderWeights, REDUCER_HIDDEN, SET_ROWS,
    SET_SEEDS,
};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("normal equations are ill-conditioned (reciprocal condition {rcond:e}); ridge fallback returned")]
    IllConditioned {
        rcond: f64,
        fallback: DatasetEmbedding,
    },
    #[error("polynomial fit needs more than {features} rows, got {rows}")]
    TooFewRows { rows: usize, features: usize },
    #[error("set encoder weights unavailable")]
    WeightsUnavailable,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reducer parameters required for mode {0}")]
    MissingReducer(Provider),
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error("embedding cache parse error at line {line}: {message}")]
    CacheFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    Poly,
    SetMean,
    SetMlp5,
    SetMlp10,
}

impl Provider {
    pub const ALL: [Provider; 4] = [
        Provider::Poly,
        Provider::SetMean,
        Provider::SetMlp5,
        Provider::SetMlp10,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Provider::Poly => "poly",
            Provider::SetMean => "set_mean",
            Provider::SetMlp5 => "set_mlp5",
            Provider::SetMlp10 => "set_mlp10",
        }
    }

    /// Output width of the MLP reducer, if this provider uses one.
    pub fn reducer_width(&self) -> Option<usize> {
        match self {
            Provider::SetMlp5 => Some(5),
            Provider::SetMlp10 => Some(10),
            _ => None,
        }
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Provider {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Provider::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown embedding provider `{s}` (expected poly, set_mean, set_mlp5 or set_mlp10)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEmbedding {
    pub c: Vec<f64>,
    pub provider: Provider,
}

/// `sign(v) * ln(1 + |v|)`: compresses the heavy tails of fitted
/// coefficients while keeping sign and order.
pub fn signed_log(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

/// Per-coordinate z-score of signed-log features, fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for row in rows {
            if sum.is_empty() {
                sum = vec![0.0; row.len()];
                sq = vec![0.0; row.len()];
            }
            for (j, v) in row.iter().enumerate() {
                let t = signed_log(*v);
                sum[j] += t;
                sq[j] += t * t;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var.sqrt() < 1e-8 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (signed_log(*v) - m) / s)
            .collect()
    }
}
