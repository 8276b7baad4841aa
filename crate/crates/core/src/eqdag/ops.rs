//! The twelve operators an equation DAG may contain.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Log,
    Exp,
    Sin,
    Cos,
    Tan,
    Arcsin,
    Pow,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Sqrt,
        OpKind::Log,
        OpKind::Exp,
        OpKind::Sin,
        OpKind::Cos,
        OpKind::Tan,
        OpKind::Arcsin,
        OpKind::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Sqrt => "sqrt",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Tan => "tan",
            OpKind::Arcsin => "arcsin",
            OpKind::Pow => "pow",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        OpKind::ALL.iter().copied().find(|op| op.name() == name)
    }

    /// Position of the operator in [`OpKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn arity(self) -> usize {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Pow => 2,
            _ => 1,
        }
    }

    pub fn is_unary(self) -> bool {
        self.arity() == 1
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, OpKind::Add | OpKind::Mul)
    }

    /// Binary operator whose operands are distinguished by argument slot.
    pub fn is_ordered_binary(self) -> bool {
        self.arity() == 2 && !self.is_commutative()
    }

    pub fn apply_unary(self, a: f64) -> f64 {
        match self {
            OpKind::Sqrt => a.sqrt(),
            OpKind::Log => a.ln(),
            OpKind::Exp => a.exp(),
            OpKind::Sin => a.sin(),
            OpKind::Cos => a.cos(),
            OpKind::Tan => a.tan(),
            OpKind::Arcsin => a.asin(),
            _ => f64::NAN,
        }
    }

    pub fn apply_binary(self, a: f64, b: f64) -> f64 {
        match self {
            OpKind::Add => a + b,
            OpKind::Sub => a - b,
            OpKind::Mul => a * b,
            OpKind::Div => a / b,
            OpKind::Pow => a.powf(b),
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
