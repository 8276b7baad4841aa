use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EquationDag, NodeType};

/// Structural rule broken by a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// An edge references a node index that does not exist.
    EdgeRange,
    /// Input variable index outside `1..=num_inputs`.
    InputRange,
    Acyclic,
    /// Node list is not a topological order.
    TopologicalOrder,
    /// Input node with an in-edge.
    Source,
    /// In-degree differs from the node type's arity.
    Arity,
    /// Missing, repeated or out-of-range argument slot.
    Slots,
    /// Output node with an out-edge.
    Sink,
    /// Zero or several output nodes.
    SingleSink,
    /// Node not on any input-to-output path.
    Reachable,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::EdgeRange => "edge_range",
            Rule::InputRange => "input_range",
            Rule::Acyclic => "acyclic",
            Rule::TopologicalOrder => "topological_order",
            Rule::Source => "source",
            Rule::Arity => "arity",
            Rule::Slots => "slots",
            Rule::Sink => "sink",
            Rule::SingleSink => "single_sink",
            Rule::Reachable => "reachable",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<(usize, Rule)>,
}

impl ValidityReport {
    fn from_violations(mut violations: Vec<(usize, Rule)>) -> Self {
        violations.sort_by_key(|&(node, rule)| (node, rule.name()));
        violations.dedup();
        Self {
            valid: violations.is_empty(),
            violations,
        }
    }

    pub fn has(&self, node: usize, rule: Rule) -> bool {
        self.violations.contains(&(node, rule))
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid {
            return f.write_str("valid");
        }
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|(n, r)| format!("node {n}: {r}"))
            .collect();
        f.write_str(&parts.join(", "))
    }
}

/// Checks every structural rule; never fails, only reports.
pub fn validate(dag: &EquationDag) -> ValidityReport {
    let n = dag.nodes.len();
    let mut violations = Vec::new();

    let outputs: Vec<usize> = (0..n)
        .filter(|&i| dag.nodes[i] == NodeType::Output)
        .collect();
    match outputs.len() {
        0 => violations.push((n.saturating_sub(1), Rule::SingleSink)),
        1 => {}
        _ => violations.extend(outputs[1..].iter().map(|&i| (i, Rule::SingleSink))),
    }

    for (i, node) in dag.nodes.iter().enumerate() {
        if let NodeType::Input(k) = node {
            if *k == 0 || *k > dag.num_inputs {
                violations.push((i, Rule::InputRange));
            }
        }
    }

    let mut in_edges: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut structural_ok = true;
    for e in &dag.edges {
        if e.src >= n || e.dst >= n {
            violations.push((e.src.max(e.dst), Rule::EdgeRange));
            structural_ok = false;
            continue;
        }
        in_edges[e.dst].push((e.src, e.slot));
        out_edges[e.src].push(e.dst);
    }

    // Kahn's algorithm; anything left over sits on a cycle.
    let mut indeg: Vec<usize> = in_edges.iter().map(Vec::len).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(u) = queue.pop_front() {
        seen += 1;
        for &v in &out_edges[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push_back(v);
            }
        }
    }
    if seen < n {
        violations.extend((0..n).filter(|&i| indeg[i] > 0).map(|i| (i, Rule::Acyclic)));
        structural_ok = false;
    } else {
        for e in &dag.edges {
            if e.src < n && e.dst < n && e.src >= e.dst {
                violations.push((e.dst, Rule::TopologicalOrder));
            }
        }
    }

    for (i, node) in dag.nodes.iter().enumerate() {
        let ins = &in_edges[i];
        match node {
            NodeType::Input(_) => {
                if !ins.is_empty() {
                    violations.push((i, Rule::Source));
                }
            }
            NodeType::Op(_) | NodeType::Output => {
                let arity = node.in_degree();
                if ins.len() != arity {
                    violations.push((i, Rule::Arity));
                }
                let mut slots: Vec<u8> = ins.iter().map(|&(_, s)| s).collect();
                slots.sort_unstable();
                let expected: Vec<u8> = (0..arity as u8).collect();
                if ins.len() == arity && slots != expected {
                    violations.push((i, Rule::Slots));
                }
            }
        }
        if *node == NodeType::Output && !out_edges[i].is_empty() {
            violations.push((i, Rule::Sink));
        }
    }

    if structural_ok && outputs.len() == 1 {
        // Backward reachability from the output, forward from the inputs.
        let out = outputs[0];
        let mut reaches_out = vec![false; n];
        let mut stack = vec![out];
        reaches_out[out] = true;
        while let Some(v) = stack.pop() {
            for &(u, _) in &in_edges[v] {
                if !reaches_out[u] {
                    reaches_out[u] = true;
                    stack.push(u);
                }
            }
        }
        let mut from_input = vec![false; n];
        let mut stack: Vec<usize> = (0..n)
            .filter(|&i| matches!(dag.nodes[i], NodeType::Input(_)))
            .collect();
        for &i in &stack {
            from_input[i] = true;
        }
        while let Some(u) = stack.pop() {
            for &v in &out_edges[u] {
                if !from_input[v] {
                    from_input[v] = true;
                    stack.push(v);
                }
            }
        }
        for i in 0..n {
            if !(reaches_out[i] && from_input[i]) {
                violations.push((i, Rule::Reachable));
            }
        }
    }

    ValidityReport::from_violations(violations)
}
