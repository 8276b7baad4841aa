//! Random unary-binary trees with a uniform shape distribution.
//!
//! For a fixed number of operator nodes every tree shape is equally likely
//! once weighted by the operator weights of each arity. The counting table
//! `D(e, n)` gives the number of ways to fill `e` empty slots using `n`
//! more operators; it drives which slot receives the next operator.

use rand::Rng;

use super::{GenConfig, GenError};
use crate::eqdag::{EquationDag, Expr, OpKind};

struct ShapeTable {
    /// `counts[n][e]` for `n` operators left and `e` empty slots.
    counts: Vec<Vec<f64>>,
    unary_weight: f64,
    binary_weight: f64,
}

impl ShapeTable {
    fn new(max_ops: usize, unary_weight: f64, binary_weight: f64) -> Self {
        let max_e = max_ops + 2;
        let mut counts = vec![vec![0.0; max_e + 1]; max_ops + 1];
        counts[0][1..].fill(1.0);
        for n in 1..=max_ops {
            for e in 1..max_e {
                counts[n][e] = counts[n][e - 1]
                    + unary_weight * counts[n - 1][e]
                    + binary_weight * counts[n - 1][e + 1];
            }
        }
        Self {
            counts,
            unary_weight,
            binary_weight,
        }
    }

    fn d(&self, e: usize, n: usize) -> f64 {
        self.counts[n].get(e).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Empty,
    Leaf,
    Op(OpKind),
}

fn weighted_pick<R: Rng + ?Sized>(rng: &mut R, items: &[(OpKind, f64)]) -> OpKind {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for &(op, w) in items {
        if u < w {
            return op;
        }
        u -= w;
    }
    items
        .iter()
        .rev()
        .find(|(_, w)| *w > 0.0)
        .expect("positive weight")
        .0
}

/// Samples one random expression tree with between 1 and
/// `config.max_internal_nodes` operators.
pub fn sample_expression<R: Rng + ?Sized>(
    rng: &mut R,
    config: &GenConfig,
) -> Result<Expr, GenError> {
    config.validate()?;
    let weights: Vec<(OpKind, f64)> = OpKind::ALL
        .iter()
        .map(|&op| (op, config.weight(op)))
        .collect();
    let unary: Vec<(OpKind, f64)> = weights
        .iter()
        .copied()
        .filter(|(op, _)| op.is_unary())
        .collect();
    let binary: Vec<(OpKind, f64)> = weights
        .iter()
        .copied()
        .filter(|(op, _)| !op.is_unary())
        .collect();
    let p1: f64 = unary.iter().map(|(_, w)| w).sum();
    let p2: f64 = binary.iter().map(|(_, w)| w).sum();

    let n_ops = rng.random_range(1..=config.max_internal_nodes);
    let table = ShapeTable::new(config.max_internal_nodes, p1, p2);

    // Pre-order sequence of slots; empty slots are filled left to right.
    let mut seq = vec![Slot::Empty];
    let mut empty = 1usize;
    for remaining in (1..=n_ops).rev() {
        let total = table.d(empty, remaining);
        let mut u = rng.random::<f64>() * total;
        let mut choice = None;
        'pick: for k in 0..empty {
            for (arity, w) in [(1usize, table.unary_weight), (2usize, table.binary_weight)] {
                let p = w * table.d(empty - k + arity - 1, remaining - 1);
                if u < p {
                    choice = Some((k, arity));
                    break 'pick;
                }
                u -= p;
            }
        }
        let (k, arity) = choice.unwrap_or_else(|| {
            // Rounding fallthrough: last feasible option.
            if table.binary_weight > 0.0 {
                (empty - 1, 2)
            } else {
                (empty - 1, 1)
            }
        });

        let op = if arity == 1 {
            weighted_pick(rng, &unary)
        } else {
            weighted_pick(rng, &binary)
        };
        let mut seen = 0;
        let mut at = 0;
        for (i, s) in seq.iter_mut().enumerate() {
            if let Slot::Empty = s {
                if seen < k {
                    *s = Slot::Leaf;
                    seen += 1;
                } else {
                    at = i;
                    break;
                }
            }
        }
        seq[at] = Slot::Op(op);
        for _ in 0..arity {
            seq.insert(at + 1, Slot::Empty);
        }
        empty = empty - k - 1 + arity;
    }

    let mut pos = 0;
    Ok(build_tree(&seq, &mut pos, rng, config.d))
}

fn build_tree<R: Rng + ?Sized>(seq: &[Slot], pos: &mut usize, rng: &mut R, d: usize) -> Expr {
    let slot = seq[*pos];
    *pos += 1;
    match slot {
        Slot::Empty | Slot::Leaf => Expr::Var(rng.random_range(1..=d)),
        Slot::Op(op) if op.is_unary() => Expr::unary(op, build_tree(seq, pos, rng, d)),
        Slot::Op(op) => {
            let a = build_tree(seq, pos, rng, d);
            let b = build_tree(seq, pos, rng, d);
            Expr::binary(op, a, b)
        }
    }
}

/// Samples one equation DAG in canonical form.
pub fn sample_equation<R: Rng + ?Sized>(
    rng: &mut R,
    config: &GenConfig,
) -> Result<EquationDag, GenError> {
    loop {
        let tree = sample_expression(rng, config)?;
        let dag =
            EquationDag::from_expression(&tree, config.d).expect("sampled variables are in range");
        if dag.is_valid() {
            return Ok(dag);
        }
    }
}
