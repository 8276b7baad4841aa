//! Conditional variational autoencoder over equation DAGs.
//!
//! The encoder runs a recurrent cell over the nodes in topological order,
//! each node aggregating gated messages from its predecessors. The decoder
//! emits nodes one at a time: a type, then an edge decision against every
//! earlier node, newest first. Ordered binary operators with two chosen
//! operands get one more decision that fixes which operand is the left one.

mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::Provider;
use crate::eqdag::{OpKind, ValidityReport};

pub use self::model::{
    reparameterize, sample_prior, Cvae, DecodeMode, Decoded, LossParts, LOGVAR_MAX, LOGVAR_MIN,
};
pub use self::train::{
    load_checkpoint, load_latest_checkpoint, train, Adam, Checkpoint, EpochStats, History,
    TrainOptions, TrainingExample,
};

#[derive(Debug, Error)]
pub enum CvaeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("cannot encode an invalid DAG: {0}")]
    InvalidDag(ValidityReport),
    #[error("non-finite loss in epoch {epoch}, batch {batch_ids:?}")]
    NonFiniteLoss {
        epoch: usize,
        batch_ids: Vec<String>,
    },
    #[error("missing condition for equation {0}")]
    MissingCondition(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    /// Input variables `d`; the node vocabulary is `d + 12 + 1`.
    pub num_inputs: usize,
    pub max_nodes: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    /// `None` for the unconditional model.
    pub conditioning: Option<Provider>,
    /// Length of the condition features fed to the model. For the MLP
    /// providers this is the flattened encoder output, reduced inside the
    /// model.
    pub condition_features: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 56,
            hidden_dim: 256,
            num_inputs: 3,
            max_nodes: 25,
            alpha: 0.005,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            grad_clip: 5.0,
            conditioning: None,
            condition_features: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn vocab_size(&self) -> usize {
        self.num_inputs + OpKind::ALL.len() + 1
    }

    /// Length of the condition vector `c` the networks see.
    pub fn condition_dim(&self) -> usize {
        match self.conditioning {
            None => 0,
            Some(p) => p.reducer_width().unwrap_or(self.condition_features),
        }
    }

    pub fn validate(&self) -> Result<(), CvaeError> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_inputs", self.num_inputs),
            ("max_nodes", self.max_nodes),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CvaeError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CvaeError::InvalidConfig(
                "alpha must be finite and nonnegative".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CvaeError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.conditioning.is_some() && self.condition_features == 0 {
            return Err(CvaeError::InvalidConfig(
                "conditional model needs condition_features > 0".into(),
            ));
        }
        Ok(())
    }
}
