//! Symbolic regression over a learned latent space of equation DAGs.
//!
//! Equations are DAGs ([`eqdag`]) sampled at random ([`eqgen`]) and paired
//! with synthetic datasets. A conditional graph VAE ([`cvae`]) learns a
//! latent space over them, optionally conditioned on a dataset embedding
//! ([`embed`]). Bayesian optimization ([`search`]) then explores that space
//! to find the equation that best fits a new dataset; [`metrics`] scores
//! the model and the discoveries.

pub mod cvae;
pub mod embed;
pub mod eqdag;
pub mod eqgen;
pub mod metrics;
pub mod rng;
pub mod search;
pub mod tape;
