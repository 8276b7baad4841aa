//! Equation DAGs: input variables as source nodes, operators as intermediate
//! nodes, and a single output sink.
//!
//! Node order in [`EquationDag::nodes`] is a topological order. Each edge
//! carries an argument slot so that `sub`, `div` and `pow` know which operand
//! is which.

mod expr;
mod io;
mod ops;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::expr::{parse_infix, parse_prefix, Expr};
pub use self::io::DagRecord;
pub use self::ops::OpKind;
pub use self::validate::{validate, Rule, ValidityReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DagError {
    #[error("invalid equation DAG: {0}")]
    Invalid(ValidityReport),
    #[error("malformed expression: {0}")]
    MalformedTree(String),
    #[error("variable x{index} exceeds input dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("unknown node token `{0}`")]
    UnknownToken(String),
}

/// A node evaluated to NaN or an infinity.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("domain error at node {node} for input {input:?}")]
pub struct DomainError {
    pub node: usize,
    pub input: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeType {
    /// 1-based input variable index.
    Input(usize),
    Op(OpKind),
    Output,
}

impl NodeType {
    pub fn token(&self) -> String {
        match self {
            NodeType::Input(i) => format!("x{i}"),
            NodeType::Op(op) => op.name().to_string(),
            NodeType::Output => "out".to_string(),
        }
    }

    pub fn from_token(token: &str) -> Result<Self, DagError> {
        if token == "out" {
            return Ok(NodeType::Output);
        }
        if let Some(op) = OpKind::from_name(token) {
            return Ok(NodeType::Op(op));
        }
        if let Some(rest) = token.strip_prefix('x') {
            if let Ok(i) = rest.parse::<usize>() {
                if i >= 1 {
                    return Ok(NodeType::Input(i));
                }
            }
        }
        Err(DagError::UnknownToken(token.to_string()))
    }

    /// Number of in-edges a well-formed node of this type has.
    pub fn in_degree(&self) -> usize {
        match self {
            NodeType::Input(_) => 0,
            NodeType::Op(op) => op.arity(),
            NodeType::Output => 1,
        }
    }

    /// Index into the model vocabulary `[x1..xd, ops.., out]`.
    pub fn vocab_index(&self, num_inputs: usize) -> usize {
        match self {
            NodeType::Input(i) => i - 1,
            NodeType::Op(op) => num_inputs + op.index(),
            NodeType::Output => num_inputs + OpKind::ALL.len(),
        }
    }

    pub fn from_vocab_index(index: usize, num_inputs: usize) -> Option<Self> {
        if index < num_inputs {
            Some(NodeType::Input(index + 1))
        } else if index < num_inputs + OpKind::ALL.len() {
            Some(NodeType::Op(OpKind::ALL[index - num_inputs]))
        } else if index == num_inputs + OpKind::ALL.len() {
            Some(NodeType::Output)
        } else {
            None
        }
    }

    /// `sub`, `div` and `pow`: the only nodes whose in-edge slots matter.
    pub fn is_ordered_binary(&self) -> bool {
        matches!(self, NodeType::Op(op) if op.is_ordered_binary())
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

impl Serialize for NodeType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.token())
    }
}

impl<'de> Deserialize<'de> for NodeType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let token = String::deserialize(deserializer)?;
        NodeType::from_token(&token).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize, u8)", into = "(usize, usize, u8)")]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub slot: u8,
}

impl Edge {
    pub fn new(src: usize, dst: usize, slot: u8) -> Self {
        Self { src, dst, slot }
    }
}

impl From<(usize, usize, u8)> for Edge {
    fn from((src, dst, slot): (usize, usize, u8)) -> Self {
        Self { src, dst, slot }
    }
}

impl From<Edge> for (usize, usize, u8) {
    fn from(e: Edge) -> Self {
        (e.src, e.dst, e.slot)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EquationDag {
    pub nodes: Vec<NodeType>,
    pub edges: Vec<Edge>,
    pub num_inputs: usize,
}

impl EquationDag {
    pub fn new(nodes: Vec<NodeType>, edges: Vec<Edge>, num_inputs: usize) -> Self {
        Self {
            nodes,
            edges,
            num_inputs,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn validate(&self) -> ValidityReport {
        validate(self)
    }

    pub fn is_valid(&self) -> bool {
        validate(self).valid
    }

    pub fn internal_node_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, NodeType::Op(_)))
            .count()
    }

    pub fn output_index(&self) -> Option<usize> {
        self.nodes.iter().position(|n| *n == NodeType::Output)
    }

    /// In-edges of `node` as `(src, slot)` pairs, sorted by slot.
    pub fn predecessors(&self, node: usize) -> Vec<(usize, u8)> {
        let mut preds: Vec<(usize, u8)> = self
            .edges
            .iter()
            .filter(|e| e.dst == node)
            .map(|e| (e.src, e.slot))
            .collect();
        preds.sort_by_key(|&(src, slot)| (slot, src));
        preds
    }

    /// Compiles a valid DAG into a flat program for repeated evaluation.
    pub fn compile(&self) -> Result<Program, DagError> {
        let report = self.validate();
        if !report.valid {
            return Err(DagError::Invalid(report));
        }
        let mut args = vec![[usize::MAX; 2]; self.nodes.len()];
        for e in &self.edges {
            args[e.dst][e.slot as usize] = e.src;
        }
        let steps = self
            .nodes
            .iter()
            .zip(args)
            .map(|(node, a)| match *node {
                NodeType::Input(i) => Step::Load(i - 1),
                NodeType::Op(op) if op.is_unary() => Step::Unary(op, a[0]),
                NodeType::Op(op) => Step::Binary(op, a[0], a[1]),
                NodeType::Output => Step::Copy(a[0]),
            })
            .collect();
        Ok(Program {
            steps,
            output: self.output_index().expect("validated DAG has an output"),
            num_inputs: self.num_inputs,
        })
    }

    /// Evaluates the equation at `x`; `x[i - 1]` feeds variable `x_i`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, EvalError> {
        let program = self.compile().map_err(EvalError::Invalid)?;
        program.eval(x).map_err(EvalError::Domain)
    }

    pub fn to_expression(&self) -> Result<Expr, DagError> {
        expr::dag_to_expr(self)
    }

    pub fn from_expression(tree: &Expr, num_inputs: usize) -> Result<Self, DagError> {
        expr::expr_to_dag(tree, num_inputs)
    }

    /// Prefix form with commutative operands sorted; identical for DAGs that
    /// expand to the same tree up to commutative argument order.
    pub fn canonical_string(&self) -> Result<String, DagError> {
        Ok(self.to_expression()?.canonical_string())
    }

    pub fn infix_string(&self) -> Result<String, DagError> {
        Ok(self.to_expression()?.to_string())
    }

    /// Returns the DAG rebuilt in canonical node order.
    pub fn canonicalize(&self) -> Result<Self, DagError> {
        Self::from_expression(&self.to_expression()?, self.num_inputs)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Invalid(DagError),
    #[error(transparent)]
    Domain(DomainError),
}

#[derive(Clone, Copy, Debug)]
enum Step {
    Load(usize),
    Unary(OpKind, usize),
    Binary(OpKind, usize, usize),
    Copy(usize),
}

/// A validated DAG flattened into evaluation steps in node order.
#[derive(Clone, Debug)]
pub struct Program {
    steps: Vec<Step>,
    output: usize,
    num_inputs: usize,
}

impl Program {
    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, DomainError> {
        let mut values = vec![0.0; self.steps.len()];
        self.eval_into(x, &mut values)
    }

    /// Evaluation reusing a caller-owned scratch buffer.
    pub fn eval_into(&self, x: &[f64], values: &mut Vec<f64>) -> Result<f64, DomainError> {
        values.clear();
        values.resize(self.steps.len(), 0.0);
        for (i, step) in self.steps.iter().enumerate() {
            let v = match *step {
                Step::Load(j) => x.get(j).copied().unwrap_or(f64::NAN),
                Step::Unary(op, a) => op.apply_unary(values[a]),
                Step::Binary(op, a, b) => op.apply_binary(values[a], values[b]),
                Step::Copy(a) => values[a],
            };
            if !v.is_finite() {
                return Err(DomainError {
                    node: i,
                    input: x.to_vec(),
                });
            }
            values[i] = v;
        }
        Ok(values[self.output])
    }
}
