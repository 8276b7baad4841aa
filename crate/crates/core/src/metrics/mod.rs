//! Evaluation metrics: reconstruction accuracy, prior-sample validity,
//! uniqueness and novelty, equation equivalence and solution rate, plus the
//! spatial autocorrelation of a latent score grid.

mod simplify;

use std::collections::BTreeSet;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cvae::{sample_prior, Cvae, CvaeError};
use crate::eqdag::{EquationDag, Expr};

pub use self::simplify::{simplify, simplify_lenient, MAX_PASSES};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("rewrite budget of {MAX_PASSES} passes exceeded")]
    RewriteBudgetExceeded { last: Expr },
    #[error("only {clean} clean points in {draws} draws")]
    InsufficientDomain { clean: usize, draws: usize },
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Model(#[from] CvaeError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub total: usize,
    pub matches: usize,
    pub accuracy_pct: f64,
    /// Per-equation outcome in input order.
    pub matched: Vec<bool>,
}

/// Encodes each DAG, decodes its posterior mean greedily and counts
/// reconstructions whose canonical string equals the original's.
pub fn reconstruction_accuracy(
    model: &Cvae,
    items: &[(&EquationDag, Option<&[f64]>)],
) -> Result<ReconstructionReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut matched = Vec::with_capacity(items.len());
    for (dag, cond) in items {
        let rec = model.reconstruct(dag, *cond)?;
        let ok = rec.is_valid() && rec.canonical_string().ok() == dag.canonical_string().ok();
        matched.push(ok);
    }
    let matches = matched.iter().filter(|m| **m).count();
    Ok(ReconstructionReport {
        total: items.len(),
        matches,
        accuracy_pct: pct(matches, items.len()),
        matched,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSampleReport {
    pub n_samples: usize,
    pub valid: usize,
    pub unique: usize,
    pub novel: usize,
    pub validity_pct: f64,
    /// Over valid samples.
    pub uniqueness_pct: f64,
    /// Over valid unique samples.
    pub novelty_pct: f64,
    /// Canonical string per sample, `None` when invalid.
    pub samples: Vec<Option<String>>,
}

impl PriorSampleReport {
    pub fn from_samples(samples: &[EquationDag], training_index: &BTreeSet<String>) -> Self {
        let strings: Vec<Option<String>> = samples
            .iter()
            .map(|g| {
                if g.is_valid() {
                    g.canonical_string().ok()
                } else {
                    None
                }
            })
            .collect();
        let valid = strings.iter().flatten().count();
        let distinct: BTreeSet<&String> = strings.iter().flatten().collect();
        let unique = distinct.len();
        let novel = distinct
            .iter()
            .filter(|s| !training_index.contains(**s))
            .count();
        Self {
            n_samples: samples.len(),
            valid,
            unique,
            novel,
            validity_pct: pct(valid, samples.len()),
            uniqueness_pct: pct(unique, valid),
            novelty_pct: pct(novel, unique),
            samples: strings,
        }
    }
}

/// Decodes `n` prior draws stochastically and reports validity, uniqueness
/// and novelty against `training_index` (canonical strings).
pub fn prior_sample_report<R: Rng + ?Sized>(
    model: &Cvae,
    training_index: &BTreeSet<String>,
    n: usize,
    conditions: &[Vec<f64>],
    rng: &mut R,
) -> Result<PriorSampleReport, MetricsError> {
    let samples = sample_prior(model, n, conditions, rng)?;
    Ok(PriorSampleReport::from_samples(&samples, training_index))
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquivalenceMethod {
    Canonical,
    Numeric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub equivalent: bool,
    pub method: EquivalenceMethod,
    pub max_abs_gap: f64,
}

pub const NUMERIC_POINTS: usize = 100;
pub const MIN_CLEAN_POINTS: usize = 30;
pub const MAX_DRAWS: usize = 10_000;
pub const NUMERIC_RANGE: f64 = 2.0;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

/// Equal normal forms, or agreement on up to 100 random points of
/// `[-2, 2]^d` where both sides are defined.
pub fn equivalent<R: Rng + ?Sized>(
    a: &Expr,
    b: &Expr,
    d: usize,
    rng: &mut R,
) -> Result<EquivalenceVerdict, MetricsError> {
    let (na, nb) = (simplify_lenient(a), simplify_lenient(b));
    if na.canonical_string() == nb.canonical_string() {
        return Ok(EquivalenceVerdict {
            equivalent: true,
            method: EquivalenceMethod::Canonical,
            max_abs_gap: 0.0,
        });
    }
    let d = d.max(a.max_var()).max(b.max_var()).max(1);
    let (mut clean, mut draws) = (0, 0);
    let (mut gap, mut scale) = (0.0f64, 1.0f64);
    let mut x = vec![0.0; d];
    while clean < NUMERIC_POINTS && draws < MAX_DRAWS {
        draws += 1;
        for v in x.iter_mut() {
            *v = rng.random_range(-NUMERIC_RANGE..=NUMERIC_RANGE);
        }
        let (Some(va), Some(vb)) = (a.evaluate(&x), b.evaluate(&x)) else {
            continue;
        };
        clean += 1;
        gap = gap.max((va - vb).abs());
        scale = scale.max(va.abs()).max(vb.abs());
    }
    if clean < MIN_CLEAN_POINTS {
        return Err(MetricsError::InsufficientDomain { clean, draws });
    }
    Ok(EquivalenceVerdict {
        equivalent: gap <= RELATIVE_TOLERANCE * scale,
        method: EquivalenceMethod::Numeric,
        max_abs_gap: gap,
    })
}

/// Equivalence of a discovered DAG against a ground truth; an invalid DAG
/// or an undecidable domain counts as a miss.
pub fn is_solution(found: &EquationDag, truth: &Expr, d: usize, rng: &mut dyn RngCore) -> bool {
    let Ok(expr) = found.to_expression() else {
        return false;
    };
    if !found.is_valid() {
        return false;
    }
    matches!(equivalent(&expr, truth, d, rng), Ok(v) if v.equivalent)
}

/// Percentage of `(discovered, ground truth)` pairs judged equivalent.
pub fn solution_rate(pairs: &[(&EquationDag, &Expr)], d: usize, rng: &mut dyn RngCore) -> f64 {
    let hits = pairs
        .iter()
        .filter(|(f, t)| is_solution(f, t, d, rng))
        .count();
    pct(hits, pairs.len())
}

/// Moran's I of a rectangular grid under rook adjacency (binary weights
/// between horizontal and vertical neighbours). `None` when the grid is
/// constant or smaller than 2 cells.
pub fn morans_i(grid: &[Vec<f64>]) -> Option<f64> {
    let rows = grid.len();
    let cols = grid.first()?.len();
    let n = rows * cols;
    if n < 2 || grid.iter().any(|r| r.len() != cols) {
        return None;
    }
    let mean = grid.iter().flatten().sum::<f64>() / n as f64;
    let dev = |i: usize, j: usize| grid[i][j] - mean;
    let denom: f64 = grid.iter().flatten().map(|v| (v - mean) * (v - mean)).sum();
    if denom <= 0.0 {
        return None;
    }
    let (mut cross, mut weight) = (0.0, 0.0);
    for i in 0..rows {
        for j in 0..cols {
            // Each unordered pair counted twice, as in the symmetric weight sum.
            if i + 1 < rows {
                cross += 2.0 * dev(i, j) * dev(i + 1, j);
                weight += 2.0;
            }
            if j + 1 < cols {
                cross += 2.0 * dev(i, j) * dev(i, j + 1);
                weight += 2.0;
            }
        }
    }
    if weight == 0.0 {
        return None;
    }
    Some(n as f64 / weight * cross / denom)
}
