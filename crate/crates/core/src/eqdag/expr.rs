//! Expression trees: infix/prefix text forms and conversion to and from DAGs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{DagError, Edge, EquationDag, NodeType, OpKind};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    /// 1-based variable index.
    Var(usize),
    Unary(OpKind, Box<Expr>),
    Binary(OpKind, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn unary(op: OpKind, a: Expr) -> Self {
        debug_assert!(op.is_unary());
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: OpKind, a: Expr, b: Expr) -> Self {
        debug_assert!(!op.is_unary());
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Number of operator nodes.
    pub fn op_count(&self) -> usize {
        match self {
            Expr::Var(_) => 0,
            Expr::Unary(_, a) => 1 + a.op_count(),
            Expr::Binary(_, a, b) => 1 + a.op_count() + b.op_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Var(_) => 0,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn max_var(&self) -> usize {
        match self {
            Expr::Var(i) => *i,
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Var(i) => {
                out.insert(*i);
            }
            Expr::Unary(_, a) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Recursive evaluation; `None` when any subterm is NaN or infinite.
    pub fn evaluate(&self, x: &[f64]) -> Option<f64> {
        let v = match self {
            Expr::Var(i) => *x.get(i.checked_sub(1)?)?,
            Expr::Unary(op, a) => op.apply_unary(a.evaluate(x)?),
            Expr::Binary(op, a, b) => op.apply_binary(a.evaluate(x)?, b.evaluate(x)?),
        };
        v.is_finite().then_some(v)
    }

    pub fn canonical_string(&self) -> String {
        self.canonical_pair().1
    }

    /// Same tree with the operands of `add`/`mul` in canonical order.
    pub fn canonical(&self) -> Expr {
        self.canonical_pair().0
    }

    fn canonical_pair(&self) -> (Expr, String) {
        match self {
            Expr::Var(i) => (Expr::Var(*i), format!("x{i}")),
            Expr::Unary(op, a) => {
                let (ea, sa) = a.canonical_pair();
                (Expr::unary(*op, ea), format!("{} {}", op.name(), sa))
            }
            Expr::Binary(op, a, b) => {
                let (mut ea, mut sa) = a.canonical_pair();
                let (mut eb, mut sb) = b.canonical_pair();
                if op.is_commutative() && sb < sa {
                    std::mem::swap(&mut ea, &mut eb);
                    std::mem::swap(&mut sa, &mut sb);
                }
                let s = format!("{} {} {}", op.name(), sa, sb);
                (Expr::binary(*op, ea, eb), s)
            }
        }
    }

    /// Space-separated prefix notation without operand reordering.
    pub fn prefix_string(&self) -> String {
        match self {
            Expr::Var(i) => format!("x{i}"),
            Expr::Unary(op, a) => format!("{} {}", op.name(), a.prefix_string()),
            Expr::Binary(op, a, b) => {
                format!("{} {} {}", op.name(), a.prefix_string(), b.prefix_string())
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(OpKind::Add | OpKind::Sub, ..) => 1,
            Expr::Binary(OpKind::Mul | OpKind::Div, ..) => 2,
            Expr::Binary(OpKind::Pow, ..) => 3,
            _ => 4,
        }
    }
}

fn infix_symbol(op: OpKind) -> &'static str {
    match op {
        OpKind::Add => "+",
        OpKind::Sub => "-",
        OpKind::Mul => "*",
        OpKind::Div => "/",
        OpKind::Pow => "^",
        _ => unreachable!("unary operators print as functions"),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Unary(op, a) => write!(f, "{}({})", op.name(), a),
            Expr::Binary(op, a, b) => {
                let p = self.precedence();
                let (pa, pb) = (a.precedence(), b.precedence());
                // `^` is right-associative, the others left-associative.
                let paren_a = if *op == OpKind::Pow { pa <= p } else { pa < p };
                let paren_b = if *op == OpKind::Pow { pb < p } else { pb <= p };
                if paren_a {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", infix_symbol(*op))?;
                if paren_b {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<Token>, DagError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token::Ident(chars[start..i].iter().collect()));
        } else if c == '*' && chars.get(i + 1) == Some(&'*') {
            tokens.push(Token::Sym('^'));
            i += 2;
        } else if "+-*/^(),".contains(c) {
            tokens.push(Token::Sym(c));
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            return Err(DagError::MalformedTree(format!(
                "numeric constant at offset {i}; equations contain no constants"
            )));
        } else {
            return Err(DagError::MalformedTree(format!(
                "unexpected character `{c}` at offset {i}"
            )));
        }
    }
    Ok(tokens)
}

fn parse_var(name: &str) -> Option<usize> {
    let i: usize = name.strip_prefix('x')?.parse().ok()?;
    (i >= 1).then_some(i)
}

fn function_op(name: &str) -> Option<OpKind> {
    match name {
        "ln" => Some(OpKind::Log),
        "asin" => Some(OpKind::Arcsin),
        _ => OpKind::from_name(name),
    }
}

struct InfixParser {
    tokens: Vec<Token>,
    pos: usize,
}

impl InfixParser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Token::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), DagError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(DagError::MalformedTree(format!(
                "expected `{c}` at token {}",
                self.pos
            )))
        }
    }

    fn expr(&mut self) -> Result<Expr, DagError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                OpKind::Add
            } else if self.eat('-') {
                OpKind::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, DagError> {
        let mut lhs = self.power()?;
        loop {
            let op = if self.eat('*') {
                OpKind::Mul
            } else if self.eat('/') {
                OpKind::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.power()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn power(&mut self) -> Result<Expr, DagError> {
        let base = self.atom()?;
        if self.eat('^') {
            let exponent = self.power()?;
            Ok(Expr::binary(OpKind::Pow, base, exponent))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, DagError> {
        match self.peek().cloned() {
            Some(Token::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if self.eat('(') {
                    let op = function_op(&name).ok_or_else(|| {
                        DagError::MalformedTree(format!("unknown operator `{name}`"))
                    })?;
                    let first = self.expr()?;
                    let e = if op.is_unary() {
                        Expr::unary(op, first)
                    } else {
                        self.expect(',')?;
                        let second = self.expr()?;
                        Expr::binary(op, first, second)
                    };
                    self.expect(')')?;
                    Ok(e)
                } else {
                    parse_var(&name)
                        .map(Expr::Var)
                        .ok_or_else(|| DagError::MalformedTree(format!("unknown symbol `{name}`")))
                }
            }
            Some(Token::Sym(c)) => Err(DagError::MalformedTree(format!(
                "unexpected `{c}` at token {}",
                self.pos
            ))),
            None => Err(DagError::MalformedTree("unexpected end of input".into())),
        }
    }
}

/// Parses infix text such as `sin(x1) * (x2 - x3) ^ x1`.
pub fn parse_infix(src: &str) -> Result<Expr, DagError> {
    let mut parser = InfixParser {
        tokens: tokenize(src)?,
        pos: 0,
    };
    let e = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(DagError::MalformedTree(format!(
            "trailing input at token {}",
            parser.pos
        )));
    }
    Ok(e)
}

/// Parses space-separated prefix text such as `mul sin x1 x2`.
pub fn parse_prefix(src: &str) -> Result<Expr, DagError> {
    fn go<'a>(it: &mut impl Iterator<Item = &'a str>) -> Result<Expr, DagError> {
        let tok = it
            .next()
            .ok_or_else(|| DagError::MalformedTree("unexpected end of prefix expression".into()))?;
        if let Some(i) = parse_var(tok) {
            return Ok(Expr::Var(i));
        }
        let op = OpKind::from_name(tok)
            .ok_or_else(|| DagError::MalformedTree(format!("unknown operator `{tok}`")))?;
        if op.is_unary() {
            Ok(Expr::unary(op, go(it)?))
        } else {
            let a = go(it)?;
            Ok(Expr::binary(op, a, go(it)?))
        }
    }
    let mut it = src.split_whitespace();
    let e = go(&mut it)?;
    if it.next().is_some() {
        return Err(DagError::MalformedTree(
            "trailing tokens in prefix expression".into(),
        ));
    }
    Ok(e)
}

pub(super) fn dag_to_expr(dag: &EquationDag) -> Result<Expr, DagError> {
    let report = dag.validate();
    if !report.valid {
        return Err(DagError::Invalid(report));
    }
    let mut args = vec![[usize::MAX; 2]; dag.nodes.len()];
    for e in &dag.edges {
        args[e.dst][e.slot as usize] = e.src;
    }
    let mut memo: Vec<Option<Expr>> = vec![None; dag.nodes.len()];
    // Node order is topological, so one forward sweep expands everything.
    for (i, node) in dag.nodes.iter().enumerate() {
        let a = args[i];
        let e = match *node {
            NodeType::Input(k) => Expr::Var(k),
            NodeType::Op(op) if op.is_unary() => {
                Expr::unary(op, memo[a[0]].clone().expect("topological order"))
            }
            NodeType::Op(op) => Expr::binary(
                op,
                memo[a[0]].clone().expect("topological order"),
                memo[a[1]].clone().expect("topological order"),
            ),
            NodeType::Output => memo[a[0]].clone().expect("topological order"),
        };
        memo[i] = Some(e);
    }
    let out = dag.output_index().expect("validated DAG has an output");
    Ok(memo[out].take().expect("output expanded"))
}

/// Builds the canonical DAG for a tree.
///
/// One input node per variable, operators kept as a tree, commutative
/// operands in canonical order. A binary operator applied to the same
/// variable twice reads its second operand from a duplicate input node so
/// that no node pair carries two edges. Nodes are ordered inputs first (by
/// variable), then operators in post-order, then the output.
pub(super) fn expr_to_dag(tree: &Expr, num_inputs: usize) -> Result<EquationDag, DagError> {
    let mut vars = BTreeSet::new();
    tree.collect_vars(&mut vars);
    if let Some(&bad) = vars.iter().find(|&&i| i == 0 || i > num_inputs) {
        return Err(DagError::VariableOutOfRange {
            index: bad,
            dim: num_inputs,
        });
    }
    let tree = tree.canonical();

    let mut doubled = BTreeSet::new();
    find_doubled_vars(&tree, &mut doubled);

    let mut nodes = Vec::new();
    let mut primary = BTreeMap::new();
    let mut duplicate = BTreeMap::new();
    for &v in &vars {
        primary.insert(v, nodes.len());
        nodes.push(NodeType::Input(v));
        if doubled.contains(&v) {
            duplicate.insert(v, nodes.len());
            nodes.push(NodeType::Input(v));
        }
    }

    struct Builder<'a> {
        nodes: Vec<NodeType>,
        edges: Vec<Edge>,
        primary: &'a BTreeMap<usize, usize>,
        duplicate: &'a BTreeMap<usize, usize>,
    }
    impl Builder<'_> {
        fn visit(&mut self, e: &Expr) -> usize {
            match e {
                Expr::Var(v) => self.primary[v],
                Expr::Unary(op, a) => {
                    let ia = self.visit(a);
                    self.push(NodeType::Op(*op), &[ia])
                }
                Expr::Binary(op, a, b) => {
                    let (ia, ib) = match (a.as_ref(), b.as_ref()) {
                        (Expr::Var(va), Expr::Var(vb)) if va == vb => {
                            (self.primary[va], self.duplicate[va])
                        }
                        _ => {
                            let ia = self.visit(a);
                            (ia, self.visit(b))
                        }
                    };
                    self.push(NodeType::Op(*op), &[ia, ib])
                }
            }
        }

        fn push(&mut self, node: NodeType, args: &[usize]) -> usize {
            let me = self.nodes.len();
            self.nodes.push(node);
            for (slot, &a) in args.iter().enumerate() {
                self.edges.push(Edge::new(a, me, slot as u8));
            }
            me
        }
    }

    let mut b = Builder {
        nodes,
        edges: Vec::new(),
        primary: &primary,
        duplicate: &duplicate,
    };
    let root = b.visit(&tree);
    b.push(NodeType::Output, &[root]);
    Ok(EquationDag {
        nodes: b.nodes,
        edges: b.edges,
        num_inputs,
    })
}

fn find_doubled_vars(e: &Expr, out: &mut BTreeSet<usize>) {
    match e {
        Expr::Var(_) => {}
        Expr::Unary(_, a) => find_doubled_vars(a, out),
        Expr::Binary(_, a, b) => {
            if let (Expr::Var(va), Expr::Var(vb)) = (a.as_ref(), b.as_ref()) {
                if va == vb {
                    out.insert(*va);
                }
            }
            find_doubled_vars(a, out);
            find_doubled_vars(b, out);
        }
    }
}
