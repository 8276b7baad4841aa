use nalgebra::{DMatrix, DVector};

use super::{DatasetEmbedding, EmbedError, Provider};
use crate::eqgen::Dataset;

/// Reciprocal condition number below which the normal system is treated as
/// singular.
const RCOND_TOLERANCE: f64 = 1e-12;

/// Exponent vectors of all monomials in `d` variables with total degree at
/// most `degree`, in graded lexicographic order: by total degree, then with
/// higher powers of earlier variables first.
pub fn monomial_exponents(d: usize, degree: usize) -> Vec<Vec<usize>> {
    fn fill(d: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == d - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            fill(d, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        fill(d, total, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

pub fn poly_features(x: &[f64], exponents: &[Vec<usize>]) -> Vec<f64> {
    exponents
        .iter()
        .map(|e| e.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyFit {
    pub embedding: DatasetEmbedding,
    pub residual_mse: f64,
}

/// Least-squares polynomial fit; the coefficient vector is the embedding.
pub fn poly_embedding(ds: &Dataset, degree: usize) -> Result<PolyFit, EmbedError> {
    if degree == 0 {
        return Err(EmbedError::ShapeMismatch(
            "polynomial degree must be at least 1".into(),
        ));
    }
    let exps = monomial_exponents(ds.dim().max(1), degree);
    let p = exps.len();
    if ds.len() <= p {
        return Err(EmbedError::TooFewRows {
            rows: ds.len(),
            features: p,
        });
    }
    let x = DMatrix::from_fn(ds.len(), p, |i, j| {
        exps[j]
            .iter()
            .zip(&ds.x[i])
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    });
    let y = DVector::from_column_slice(&ds.y);
    let a = x.transpose() * &x;
    let b = x.transpose() * &y;

    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let rcond = if max > 0.0 { min / max } else { 0.0 };

    let solve = |m: DMatrix<f64>| m.cholesky().map(|c| c.solve(&b));
    let well_posed = rcond.is_finite() && rcond > RCOND_TOLERANCE;
    let coef = if well_posed { solve(a.clone()) } else { None };
    let finish = |coef: DVector<f64>| {
        let resid = &x * &coef - &y;
        let mse = resid.norm_squared() / ds.len() as f64;
        PolyFit {
            embedding: DatasetEmbedding {
                c: coef.iter().copied().collect(),
                provider: Provider::Poly,
            },
            residual_mse: mse,
        }
    };
    match coef {
        Some(c) if c.iter().all(|v| v.is_finite()) => Ok(finish(c)),
        _ => {
            let lambda = 1e-8 * max.max(1.0);
            let ridge = a + DMatrix::identity(p, p) * lambda;
            let c = solve(ridge).unwrap_or_else(|| DVector::zeros(p));
            let c = c.map(|v| if v.is_finite() { v } else { 0.0 });
            Err(EmbedError::IllConditioned {
                rcond,
                fallback: finish(c).embedding,
            })
        }
    }
}
