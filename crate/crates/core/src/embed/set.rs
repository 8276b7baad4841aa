//! Reference set encoder: a per-row MLP followed by attention pooling with
//! learned seed vectors. Pooling is a softmax-weighted sum over rows, so the
//! output does not depend on row order.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{signed_log, DatasetEmbedding, EmbedError, Provider};
use crate::eqgen::Dataset;
use crate::rng;
use crate::tape::Tensor;

/// Rows of the encoder output.
pub const SET_ROWS: usize = 512;
/// Columns of the encoder output (one per pooling seed).
pub const SET_SEEDS: usize = 10;
const HIDDEN: usize = 32;
const WEIGHTS_VERSION: u32 = 1;
pub const REDUCER_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetEncoderWeights {
    pub version: u32,
    /// Number of input variables the encoder expects (`d`).
    pub input_dim: usize,
    pub tensors: Vec<Tensor>,
}

impl SetEncoderWeights {
    /// Randomly initialized encoder shipped with the crate.
    pub fn reference(input_dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "set-encoder", input_dim as u64);
        let mut tensor = |name: &str, rows: usize, cols: usize, scale: f64| Tensor {
            name: name.into(),
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| r.random_range(-scale..scale))
                .collect(),
        };
        let fan_in = (input_dim + 1) as f64;
        let tensors = vec![
            tensor("embed.w", HIDDEN, input_dim + 1, 1.0 / fan_in.sqrt()),
            tensor("embed.b", HIDDEN, 1, 0.5),
            tensor("value.w", SET_ROWS, HIDDEN, 1.0 / (HIDDEN as f64).sqrt()),
            tensor("value.b", SET_ROWS, 1, 0.1),
            tensor("seeds", SET_SEEDS, HIDDEN, 1.0),
        ];
        Self {
            version: WEIGHTS_VERSION,
            input_dim,
            tensors,
        }
    }

    fn tensor(&self, name: &str) -> Result<&Tensor, EmbedError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| EmbedError::WeightFormat(format!("missing tensor `{name}`")))
    }

    pub fn check(&self) -> Result<(), EmbedError> {
        if self.version != WEIGHTS_VERSION {
            return Err(EmbedError::WeightFormat(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let expect = [
            ("embed.w", HIDDEN, self.input_dim + 1),
            ("embed.b", HIDDEN, 1),
            ("value.w", SET_ROWS, HIDDEN),
            ("value.b", SET_ROWS, 1),
            ("seeds", SET_SEEDS, HIDDEN),
        ];
        for (name, rows, cols) in expect {
            let t = self.tensor(name)?;
            if t.rows != rows || t.cols != cols || t.data.len() != rows * cols {
                return Err(EmbedError::WeightFormat(format!(
                    "tensor `{name}` has shape {}x{} ({} values), expected {rows}x{cols}",
                    t.rows,
                    t.cols,
                    t.data.len()
                )));
            }
        }
        Ok(())
    }

    /// Loads a weight file; `None` means no file was supplied.
    pub fn load(path: Option<&Path>) -> Result<Self, EmbedError> {
        let path = path.ok_or(EmbedError::WeightsUnavailable)?;
        let text = fs::read_to_string(path)?;
        let w: Self =
            serde_json::from_str(&text).map_err(|e| EmbedError::WeightFormat(e.to_string()))?;
        w.check()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        fs::write(
            path,
            serde_json::to_string(self).expect("weights serialize"),
        )?;
        Ok(())
    }
}

fn affine(t: &Tensor, b: &Tensor, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &t.data[i * t.cols..(i + 1) * t.cols];
        *o = b.data[i] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Encodes the rows of `ds` as an unordered set; returns a
/// `SET_ROWS x SET_SEEDS` matrix.
pub fn set_encode(ds: &Dataset, w: &SetEncoderWeights) -> Result<DMatrix<f64>, EmbedError> {
    w.check()?;
    if ds.dim() != w.input_dim {
        return Err(EmbedError::ShapeMismatch(format!(
            "dataset has {} inputs, encoder expects {}",
            ds.dim(),
            w.input_dim
        )));
    }
    if ds.is_empty() {
        return Err(EmbedError::ShapeMismatch("empty dataset".into()));
    }
    let (ew, eb) = (w.tensor("embed.w")?, w.tensor("embed.b")?);
    let (vw, vb) = (w.tensor("value.w")?, w.tensor("value.b")?);
    let seeds = w.tensor("seeds")?;
    let scale = 1.0 / (HIDDEN as f64).sqrt();

    let n = ds.len();
    let mut hidden = vec![[0.0; HIDDEN]; n];
    let mut input = vec![0.0; w.input_dim + 1];
    for (i, (row, y)) in ds.x.iter().zip(&ds.y).enumerate() {
        for (dst, v) in input.iter_mut().zip(row.iter().chain(std::iter::once(y))) {
            *dst = signed_log(*v);
        }
        affine(ew, eb, &input, &mut hidden[i]);
        hidden[i].iter_mut().for_each(|h| *h = h.tanh());
    }

    // Attention weights per seed, then one pass over rows for the values.
    let mut attn = vec![vec![0.0; n]; SET_SEEDS];
    for (s, a) in attn.iter_mut().enumerate() {
        let q = &seeds.data[s * HIDDEN..(s + 1) * HIDDEN];
        for (ai, h) in a.iter_mut().zip(&hidden) {
            *ai = scale * q.iter().zip(h).map(|(x, y)| x * y).sum::<f64>();
        }
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for ai in a.iter_mut() {
            *ai = (*ai - max).exp();
            z += *ai;
        }
        a.iter_mut().for_each(|ai| *ai /= z);
    }
    let mut out = DMatrix::zeros(SET_ROWS, SET_SEEDS);
    let mut value = vec![0.0; SET_ROWS];
    for (i, h) in hidden.iter().enumerate() {
        affine(vw, vb, h, &mut value);
        for (s, a) in attn.iter().enumerate() {
            let weight = a[i];
            let mut col = out.column_mut(s);
            for (o, v) in col.iter_mut().zip(&value) {
                *o += weight * v;
            }
        }
    }
    Ok(out)
}

/// Flattened `512 x 10` encoder output, row-major.
pub fn flatten_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// Two-layer reducer `W2 tanh(W1 x + b1) + b2` over the flattened encoder
/// output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpReducer {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpReducer {
    pub fn random(out: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "reducer", out as u64);
        let mut tensor = |name: &str, rows: usize, cols: usize, scale: f64| Tensor {
            name: name.into(),
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| {
                    if scale > 0.0 {
                        r.random_range(-scale..scale)
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        let inputs = SET_ROWS * SET_SEEDS;
        Self {
            w1: tensor(
                "reducer.w1",
                REDUCER_HIDDEN,
                inputs,
                1.0 / (inputs as f64).sqrt(),
            ),
            b1: tensor("reducer.b1", REDUCER_HIDDEN, 1, 0.0),
            w2: tensor(
                "reducer.w2",
                out,
                REDUCER_HIDDEN,
                1.0 / (REDUCER_HIDDEN as f64).sqrt(),
            ),
            b2: tensor("reducer.b2", out, 1, 0.0),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w2.rows
    }

    pub fn forward(&self, flat: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.w1.rows];
        affine(&self.w1, &self.b1, flat, &mut h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = vec![0.0; self.w2.rows];
        affine(&self.w2, &self.b2, &h, &mut out);
        out
    }
}

/// Reduces an encoder output to a condition vector.
pub fn reduce(
    matrix: &DMatrix<f64>,
    mode: Provider,
    reducer: Option<&MlpReducer>,
) -> Result<DatasetEmbedding, EmbedError> {
    if matrix.nrows() != SET_ROWS || matrix.ncols() != SET_SEEDS {
        return Err(EmbedError::ShapeMismatch(format!(
            "expected a {SET_ROWS}x{SET_SEEDS} matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let c = match mode {
        Provider::Poly => {
            return Err(EmbedError::ShapeMismatch(
                "poly is not a reducer mode".into(),
            ))
        }
        Provider::SetMean => (0..SET_SEEDS)
            .map(|j| matrix.column(j).sum() / SET_ROWS as f64)
            .collect(),
        Provider::SetMlp5 | Provider::SetMlp10 => {
            let r = reducer.ok_or(EmbedError::MissingReducer(mode))?;
            let want = mode.reducer_width().expect("mlp mode");
            if r.out_dim() != want {
                return Err(EmbedError::ShapeMismatch(format!(
                    "reducer outputs {} values, mode {mode} needs {want}",
                    r.out_dim()
                )));
            }
            r.forward(&flatten_row_major(matrix))
        }
    };
    Ok(DatasetEmbedding { c, provider: mode })
}
