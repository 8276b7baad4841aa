//! Random equation corpora and the synthetic datasets built from them.

mod corpus;
mod dataset;
mod sampler;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eqdag::OpKind;

pub use self::corpus::{
    generate_corpus, read_corpus_file, write_corpus_file, Corpus, CorpusHeader, NamedDag,
};
pub use self::dataset::{
    read_dataset_file, synthesize_dataset, write_dataset, write_dataset_file, Dataset, DatasetFile,
};
pub use self::sampler::{sample_equation, sample_expression};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("only {found} distinct equations after {draws} draws, {wanted} requested")]
    GenerationExhausted {
        wanted: usize,
        found: usize,
        draws: usize,
    },
    #[error(
        "equation undefined almost everywhere: {accepted} of {attempts} sampled rows were defined"
    )]
    UndefinedAlmostEverywhere { accepted: usize, attempts: usize },
    #[error("dataset parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus format error at line {line}: {message}")]
    CorpusFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }
}

impl From<[f64; 2]> for Interval {
    fn from([low, high]: [f64; 2]) -> Self {
        Self { low, high }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.low, i.high]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Input dimension.
    pub d: usize,
    pub max_internal_nodes: usize,
    /// Missing operators have weight 0 unless the map is empty, in which
    /// case every operator has weight 1.
    pub operator_weights: BTreeMap<OpKind, f64>,
    pub seed: u64,
    /// Sampling interval used for every input dimension.
    pub input_range: Interval,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            d: 3,
            max_internal_nodes: 10,
            operator_weights: OpKind::ALL.iter().map(|&op| (op, 1.0)).collect(),
            seed: 0,
            input_range: Interval::new(-2.0, 2.0),
        }
    }
}

impl GenConfig {
    pub fn weight(&self, op: OpKind) -> f64 {
        if self.operator_weights.is_empty() {
            1.0
        } else {
            self.operator_weights.get(&op).copied().unwrap_or(0.0)
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.d == 0 {
            return Err(GenError::InvalidConfig("d must be at least 1".into()));
        }
        if self.max_internal_nodes == 0 {
            return Err(GenError::InvalidConfig(
                "max_internal_nodes must be at least 1".into(),
            ));
        }
        if self
            .operator_weights
            .values()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(GenError::InvalidConfig(
                "operator weights must be finite and nonnegative".into(),
            ));
        }
        if !OpKind::ALL.iter().any(|&op| self.weight(op) > 0.0) {
            return Err(GenError::InvalidConfig(
                "at least one operator weight must be positive".into(),
            ));
        }
        let r = self.input_range;
        if !(r.low.is_finite() && r.high.is_finite() && r.low < r.high) {
            return Err(GenError::InvalidConfig(
                "input range must be a finite nonempty interval".into(),
            ));
        }
        Ok(())
    }

    /// Same interval for each of the `d` inputs.
    pub fn input_box(&self) -> Vec<Interval> {
        vec![self.input_range; self.d]
    }
}
