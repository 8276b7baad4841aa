use serde::{Deserialize, Serialize};

use super::{DagError, Edge, EquationDag, NodeType};

/// One corpus line: `{id, d, nodes, edges, infix, canonical}` in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagRecord {
    pub id: String,
    pub d: usize,
    pub nodes: Vec<NodeType>,
    pub edges: Vec<Edge>,
    pub infix: String,
    pub canonical: String,
}

impl DagRecord {
    pub fn from_dag(id: impl Into<String>, dag: &EquationDag) -> Result<Self, DagError> {
        let tree = dag.to_expression()?;
        Ok(Self {
            id: id.into(),
            d: dag.num_inputs,
            nodes: dag.nodes.clone(),
            edges: dag.edges.clone(),
            infix: tree.to_string(),
            canonical: tree.canonical_string(),
        })
    }

    pub fn to_dag(&self) -> EquationDag {
        EquationDag::new(self.nodes.clone(), self.edges.clone(), self.d)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eqdag::parse_infix;

    #[test]
    fn field_order_is_fixed() {
        let dag = EquationDag::from_expression(&parse_infix("x1 + x2").unwrap(), 2).unwrap();
        let line = DagRecord::from_dag("eq-000001", &dag).unwrap().to_line();
        assert_eq!(
            line,
            r#"{"id":"eq-000001","d":2,"nodes":["x1","x2","add","out"],"edges":[[0,2,0],[1,2,1],[2,3,0]],"infix":"x1 + x2","canonical":"add x1 x2"}"#
        );
        let back = DagRecord::from_line(&line).unwrap();
        assert_eq!(back.to_dag(), dag);
    }
}
