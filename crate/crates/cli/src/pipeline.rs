//! Steps shared by several subcommands.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use eqlatent_core::cvae::{
    load_checkpoint, load_latest_checkpoint, Cvae, DecodeMode, TrainingExample,
};
use eqlatent_core::embed::{
    flatten_row_major, monomial_exponents, poly_embedding, read_embedding_cache, reduce,
    set_encode, EmbedError, EmbeddingCache, Provider, SetEncoderWeights,
};
use eqlatent_core::eqgen::{
    read_corpus_file, read_dataset_file, CorpusHeader, Dataset, GenError, NamedDag,
};
use eqlatent_core::metrics::morans_i;
use eqlatent_core::search::score;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{CliError, EncoderArgs};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const DATASET_DIR: &str = "datasets";
pub const MANIFEST_FILE: &str = "manifest.json";

pub struct CorpusDir {
    pub header: CorpusHeader,
    pub train: Vec<NamedDag>,
    pub test: Vec<NamedDag>,
    pub root: PathBuf,
}

impl CorpusDir {
    pub fn load(root: &Path) -> Result<Self, CliError> {
        let (header, train) = read_corpus(&root.join(TRAIN_FILE))?;
        let (_, test) = read_corpus(&root.join(TEST_FILE))?;
        Ok(Self {
            header,
            train,
            test,
            root: root.to_path_buf(),
        })
    }

    pub fn dataset_path(&self, id: &str) -> PathBuf {
        dataset_path(&self.root, id)
    }

    pub fn num_inputs(&self) -> usize {
        self.header.gen_config.d
    }
}

pub fn dataset_path(root: &Path, id: &str) -> PathBuf {
    root.join(DATASET_DIR).join(format!("{id}.csv"))
}

fn read_corpus(path: &Path) -> Result<(CorpusHeader, Vec<NamedDag>), CliError> {
    read_corpus_file(path).map_err(|e| match e {
        GenError::Io(io) => CliError::io(path, io),
        other => CliError::User(format!("{}: {other}", path.display())),
    })
}

pub fn read_dataset(path: &Path) -> Result<(Option<String>, Dataset), CliError> {
    match read_dataset_file(path) {
        Ok(f) => Ok((f.source_id, f.dataset)),
        Err(GenError::Io(io)) => Err(CliError::io(path, io)),
        Err(e) => Err(CliError::User(format!("{}: {e}", path.display()))),
    }
}

/// `none` maps to `None`.
pub fn parse_condition(name: &str) -> Result<Option<Provider>, CliError> {
    if name == "none" {
        return Ok(None);
    }
    name.parse::<Provider>().map(Some).map_err(CliError::User)
}

pub fn encoder_weights(
    args: &EncoderArgs,
    input_dim: usize,
) -> Result<SetEncoderWeights, EmbedError> {
    match args.weights.as_deref() {
        Some("reference") => Ok(SetEncoderWeights::reference(input_dim, args.encoder_seed)),
        Some(path) => SetEncoderWeights::load(Some(Path::new(path))),
        None => SetEncoderWeights::load(None),
    }
}

/// Raw condition features of `ds` for `provider`. Poly fits that are
/// ill-conditioned fall back to the ridge solution, reported through
/// `warn`.
pub fn condition_features(
    provider: Provider,
    ds: &Dataset,
    weights: Option<&SetEncoderWeights>,
    poly_degree: usize,
    warn: &mut dyn FnMut(String),
) -> Result<Vec<f64>, EmbedError> {
    match provider {
        Provider::Poly => {
            match poly_embedding(ds, poly_degree) {
                Ok(fit) => Ok(fit.embedding.c),
                Err(EmbedError::IllConditioned { rcond, fallback }) => {
                    warn(format!("ill-conditioned polynomial fit (rcond {rcond:.1e}), using the ridge solution"));
                    Ok(fallback.c)
                }
                Err(e) => Err(e),
            }
        }
        Provider::SetMean => {
            let w = weights.ok_or(EmbedError::WeightsUnavailable)?;
            Ok(reduce(&set_encode(ds, w)?, Provider::SetMean, None)?.c)
        }
        Provider::SetMlp5 | Provider::SetMlp10 => {
            let w = weights.ok_or(EmbedError::WeightsUnavailable)?;
            Ok(flatten_row_major(&set_encode(ds, w)?))
        }
    }
}

/// Polynomial degree whose coefficient count is `features` for `d` inputs.
pub fn poly_degree_for(d: usize, features: usize) -> Option<usize> {
    (0..=8).find(|&deg| monomial_exponents(d, deg).len() == features)
}

/// Condition for `ds` under the model's own provider; `None` for an
/// unconditional model.
pub fn model_condition(
    model: &Cvae,
    ds: &Dataset,
    encoder: &EncoderArgs,
    warn: &mut dyn FnMut(String),
) -> Result<Option<Vec<f64>>, CliError> {
    let Some(provider) = model.config.conditioning else {
        return Ok(None);
    };
    let d = model.config.num_inputs;
    if ds.dim() != d {
        return Err(CliError::User(format!(
            "dataset has {} inputs, model expects {d}",
            ds.dim()
        )));
    }
    let (weights, degree) = match provider {
        Provider::Poly => {
            let deg = poly_degree_for(d, model.config.condition_features).ok_or_else(|| {
                anyhow!(
                    "no polynomial degree gives {} features",
                    model.config.condition_features
                )
            })?;
            (None, deg)
        }
        _ => (
            Some(
                encoder_weights(encoder, d)
                    .map_err(|e| CliError::User(format!("set encoder: {e}")))?,
            ),
            0,
        ),
    };
    let c = condition_features(provider, ds, weights.as_ref(), degree, warn)
        .map_err(|e| CliError::User(format!("embedding: {e}")))?;
    Ok(Some(c))
}

/// A checkpoint file, or the latest checkpoint of a directory.
pub fn load_model(path: &Path) -> Result<Cvae, CliError> {
    let ckpt = if path.is_dir() {
        load_latest_checkpoint(path)
            .map_err(|e| CliError::User(format!("{}: {e}", path.display())))?
            .ok_or_else(|| CliError::User(format!("{}: no checkpoint found", path.display())))?
    } else if path.exists() {
        load_checkpoint(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?
    } else {
        return Err(CliError::User(format!(
            "{}: checkpoint not found",
            path.display()
        )));
    };
    ckpt.into_model()
        .map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

pub fn load_cache(path: &Path) -> Result<EmbeddingCache, CliError> {
    read_embedding_cache(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

/// Whether features cached for `cached` can feed a model conditioned on
/// `wanted`. Both MLP providers store the same flattened encoder output.
pub fn cache_serves(cached: Provider, wanted: Provider) -> bool {
    let mlp = |p| matches!(p, Provider::SetMlp5 | Provider::SetMlp10);
    cached == wanted || (mlp(cached) && mlp(wanted))
}

/// Pairs corpus entries with cached conditions. Entries without a cached
/// condition are skipped for a conditional model; their ids are returned.
pub fn training_examples(
    entries: &[NamedDag],
    cache: Option<&EmbeddingCache>,
) -> (Vec<TrainingExample>, Vec<String>) {
    let mut out = Vec::with_capacity(entries.len());
    let mut skipped = Vec::new();
    for e in entries {
        let condition = match cache {
            None => None,
            Some(c) => match c.get(&e.id) {
                Some(v) => Some(v.to_vec()),
                None => {
                    skipped.push(e.id.clone());
                    continue;
                }
            },
        };
        out.push(TrainingExample {
            id: e.id.clone(),
            dag: e.dag.clone(),
            condition,
        });
    }
    (out, skipped)
}

/// Mean and the two leading principal directions of `points`, with the
/// sign of each direction fixed so its largest-magnitude entry is positive.
pub fn principal_plane(points: &[Vec<f64>]) -> Result<(Vec<f64>, [Vec<f64>; 2]), CliError> {
    if points.len() < 3 {
        return Err(CliError::User(format!(
            "need at least 3 encodable equations, found {}",
            points.len()
        )));
    }
    let k = points[0].len();
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..k)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();
    let centered = DMatrix::from_fn(points.len(), k, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let direction = |idx: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    if k < 2 {
        return Err(CliError::User(
            "latent space must have at least 2 dimensions".into(),
        ));
    }
    Ok((mean, [direction(order[0]), direction(order[1])]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    /// Coordinates along the first and second principal directions.
    pub u: f64,
    pub v: f64,
    pub score: f64,
    pub canonical: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub cells: Vec<GridCell>,
    pub size: usize,
    pub morans_i: Option<f64>,
}

impl LatentGrid {
    pub fn scores(&self) -> Vec<Vec<f64>> {
        self.cells
            .chunks(self.size)
            .map(|row| row.iter().map(|c| c.score).collect())
            .collect()
    }
}

/// Greedy-decodes a `size x size` grid spanning the training means'
/// projections onto their principal plane, widened by `margin`, and
/// scores every cell against `ds`.
pub fn latent_grid(
    model: &Cvae,
    mus: &[Vec<f64>],
    condition: Option<&[f64]>,
    ds: &Dataset,
    size: usize,
    margin: f64,
) -> Result<LatentGrid, CliError> {
    if size < 2 {
        return Err(CliError::User(
            "grid needs at least 2 cells per side".into(),
        ));
    }
    let (mean, [p1, p2]) = principal_plane(mus)?;
    let project = |z: &[f64], p: &[f64]| {
        z.iter()
            .zip(&mean)
            .zip(p)
            .map(|((a, m), b)| (a - m) * b)
            .sum::<f64>()
    };
    let range = |p: &[f64]| {
        let (lo, hi) = mus
            .iter()
            .map(|z| project(z, p))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| {
                (l.min(x), h.max(x))
            });
        let pad = margin * (hi - lo).max(1e-9);
        (lo - pad, hi + pad)
    };
    let ((u0, u1), (v0, v1)) = (range(&p1), range(&p2));
    let mut cells = Vec::with_capacity(size * size);
    for row in 0..size {
        let v = v0 + (v1 - v0) * row as f64 / (size - 1) as f64;
        for col in 0..size {
            let u = u0 + (u1 - u0) * col as f64 / (size - 1) as f64;
            let z: Vec<f64> = (0..mean.len())
                .map(|j| mean[j] + u * p1[j] + v * p2[j])
                .collect();
            let dag = model
                .decode(&z, condition, DecodeMode::Greedy)
                .map_err(|e| anyhow!(e))?
                .dag;
            let canonical = if dag.is_valid() {
                dag.canonical_string().ok()
            } else {
                None
            };
            cells.push(GridCell {
                row,
                col,
                u,
                v,
                score: score(&dag, ds),
                canonical,
            });
        }
    }
    let mut grid = LatentGrid {
        cells,
        size,
        morans_i: None,
    };
    grid.morans_i = morans_i(&grid.scores());
    Ok(grid)
}
