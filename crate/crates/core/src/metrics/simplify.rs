//! Rule-based normal form for expression trees.
//!
//! Rewrites applied bottom-up until nothing changes:
//! - `log(exp(t))` becomes `t`;
//! - `t - (t - u)` becomes `u`;
//! - chains of `add` and of `mul` are flattened, their operands sorted by
//!   canonical string and re-nested to the left.
//!
//! `exp(log(t))` is left alone since it is only `t` for positive `t`, and
//! `t - t` is left alone since the grammar has no zero.

use crate::eqdag::{Expr, OpKind};

use super::MetricsError;

pub const MAX_PASSES: usize = 100;

pub fn simplify(tree: &Expr) -> Result<Expr, MetricsError> {
    let mut cur = tree.clone();
    for _ in 0..MAX_PASSES {
        let next = pass(&cur);
        if next == cur {
            return Ok(cur);
        }
        cur = next;
    }
    Err(MetricsError::RewriteBudgetExceeded { last: cur })
}

/// Like [`simplify`] but returns the last form when the budget runs out.
pub fn simplify_lenient(tree: &Expr) -> Expr {
    match simplify(tree) {
        Ok(e) => e,
        Err(MetricsError::RewriteBudgetExceeded { last }) => last,
        Err(_) => unreachable!("simplify only fails on the rewrite budget"),
    }
}

fn pass(e: &Expr) -> Expr {
    match e {
        Expr::Var(i) => Expr::Var(*i),
        Expr::Unary(op, a) => {
            let a = pass(a);
            match (op, &a) {
                (OpKind::Log, Expr::Unary(OpKind::Exp, inner)) => (**inner).clone(),
                _ => Expr::unary(*op, a),
            }
        }
        Expr::Binary(op, a, b) => {
            let (a, b) = (pass(a), pass(b));
            match op {
                OpKind::Sub => match &b {
                    Expr::Binary(OpKind::Sub, t, u) if **t == a => (**u).clone(),
                    _ => Expr::binary(OpKind::Sub, a, b),
                },
                OpKind::Add | OpKind::Mul => {
                    let mut operands = Vec::new();
                    flatten(*op, a, &mut operands);
                    flatten(*op, b, &mut operands);
                    let mut keyed: Vec<(String, Expr)> = operands
                        .into_iter()
                        .map(|t| (t.canonical_string(), t))
                        .collect();
                    keyed.sort_by(|x, y| x.0.cmp(&y.0));
                    let mut it = keyed.into_iter().map(|(_, t)| t);
                    let first = it.next().expect("a binary node has two operands");
                    it.fold(first, |acc, t| Expr::binary(*op, acc, t))
                }
                _ => Expr::binary(*op, a, b),
            }
        }
    }
}

fn flatten(op: OpKind, e: Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::Binary(o, a, b) if o == op => {
            flatten(op, *a, out);
            flatten(op, *b, out);
        }
        other => out.push(other),
    }
}
