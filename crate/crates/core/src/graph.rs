//! Binary task graph and its JSON / DOT serializations.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskGraphError};
use crate::vocab::{Vocabulary, END_LABEL, START_LABEL};

/// Edge `(i, j)`: `K_j` is a pre-condition of `K_i`.
pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTaskGraph {
    vocab: Arc<Vocabulary>,
    edges: BTreeSet<Edge>,
}

impl BinaryTaskGraph {
    /// Validates node range, the START/END edge rules and acyclicity.
    pub fn new(vocab: Arc<Vocabulary>, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let edges: BTreeSet<Edge> = edges.into_iter().collect();
        let size = vocab.size();
        for &(i, j) in &edges {
            if i >= size || j >= size {
                return Err(TaskGraphError::InvalidInput(format!(
                    "edge ({i},{j}) outside graph of size {size}"
                )));
            }
            if i == j || i == 0 || j == size - 1 {
                return Err(TaskGraphError::InvalidInput(format!(
                    "edge ({i},{j}) violates the START/END or self-loop rules"
                )));
            }
        }
        if !is_acyclic(size, &edges) {
            return Err(TaskGraphError::InvalidInput(
                "graph contains a cycle".into(),
            ));
        }
        Ok(BinaryTaskGraph { vocab, edges })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    /// Direct pre-conditions of `i`.
    pub fn predecessors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((i, 0)..(i + 1, 0)).map(|&(_, j)| j)
    }

    /// Key-steps that list `i` as a direct pre-condition.
    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |&&(_, j)| j == i)
            .map(|&(h, _)| h)
    }

    pub fn to_json(&self) -> GraphDocument {
        GraphDocument {
            nodes: self.vocab.node_labels(),
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("graph document serializes")
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph task_graph {\n");
        for i in 0..self.vocab.size() {
            let _ = writeln!(out, "    {};", quote(self.vocab.label(i)));
        }
        for &(i, j) in &self.edges {
            let _ = writeln!(
                out,
                "    {} -> {};",
                quote(self.vocab.label(i)),
                quote(self.vocab.label(j))
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Json => self.to_json_string(),
            ExportFormat::Dot => self.to_dot(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        doc.into_graph()
    }
}

fn quote(label: &str) -> String {
    format!("\"{}\"", label.replace('\\', "\\\\").replace('"', "\\\""))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl std::str::FromStr for ExportFormat {
    type Err = TaskGraphError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            other => Err(TaskGraphError::InvalidInput(format!(
                "unknown export format {other:?} (expected json or dot)"
            ))),
        }
    }
}

/// On-disk graph: node labels with START first and END last, and edges as
/// index pairs `[from, to]` sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<String>,
    pub edges: Vec<[usize; 2]>,
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<BinaryTaskGraph> {
        let k = self.nodes.len();
        if k < 3 || self.nodes[0] != START_LABEL || self.nodes[k - 1] != END_LABEL {
            return Err(TaskGraphError::InvalidInput(
                "graph nodes must be START, at least one key-step, END".into(),
            ));
        }
        let vocab = Arc::new(Vocabulary::new(self.nodes[1..k - 1].iter().cloned())?);
        BinaryTaskGraph::new(vocab, self.edges.into_iter().map(|[i, j]| (i, j)))
    }
}

/// Kahn's algorithm over an edge set on `size` nodes.
pub fn is_acyclic(size: usize, edges: &BTreeSet<Edge>) -> bool {
    topological_order(size, edges).is_some()
}

/// A topological order in which every node comes after its pre-conditions.
pub fn topological_order(size: usize, edges: &BTreeSet<Edge>) -> Option<Vec<usize>> {
    let mut pending = vec![0usize; size];
    let mut dependents = vec![Vec::new(); size];
    for &(i, j) in edges {
        pending[i] += 1;
        dependents[j].push(i);
    }
    let mut ready: Vec<usize> = (0..size).rev().filter(|&v| pending[v] == 0).collect();
    let mut order = Vec::with_capacity(size);
    while let Some(v) = ready.pop() {
        order.push(v);
        for &d in &dependents[v] {
            pending[d] -= 1;
            if pending[d] == 0 {
                ready.push(d);
            }
        }
    }
    (order.len() == size).then_some(order)
}

/// `reach[a][b]`: a path of length >= 1 leads from `a` to `b`.
pub fn transitive_closure(size: usize, edges: &BTreeSet<Edge>) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; size]; size];
    for &(i, j) in edges {
        reach[i][j] = true;
    }
    for k in 0..size {
        let via = reach[k].clone();
        for row in reach.iter_mut().filter(|row| row[k]) {
            for (cell, &r) in row.iter_mut().zip(&via) {
                *cell |= r;
            }
        }
    }
    reach
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> BinaryTaskGraph {
        let vocab = Arc::new(Vocabulary::new(["A", "B"]).unwrap());
        BinaryTaskGraph::new(vocab, [(1, 0), (2, 1), (3, 2)]).unwrap()
    }

    #[test]
    fn rejects_cycles_and_masked_edges() {
        let vocab = Arc::new(Vocabulary::new(["A", "B"]).unwrap());
        assert!(BinaryTaskGraph::new(vocab.clone(), [(1, 2), (2, 1)]).is_err());
        assert!(BinaryTaskGraph::new(vocab.clone(), [(0, 1)]).is_err());
        assert!(BinaryTaskGraph::new(vocab.clone(), [(1, 3)]).is_err());
        assert!(BinaryTaskGraph::new(vocab, [(1, 1)]).is_err());
    }

    #[test]
    fn dot_contains_edges() {
        let dot = chain().to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("\"B\" -> \"A\";"));
        assert!(dot.contains("\"END\" -> \"B\";"));
    }

    #[test]
    fn json_roundtrip() {
        let g = chain();
        let text = g.export(ExportFormat::Json);
        let back = BinaryTaskGraph::from_json_str(&text).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.vocab().names(), g.vocab().names());
        let doc = g.to_json();
        assert_eq!(doc.nodes, vec!["START", "A", "B", "END"]);
        assert_eq!(doc.edges, vec![[1, 0], [2, 1], [3, 2]]);
    }

    #[test]
    fn json_without_interior_nodes_is_rejected() {
        let text = r#"{"nodes":["START","END"],"edges":[]}"#;
        assert!(BinaryTaskGraph::from_json_str(text).is_err());
    }

    #[test]
    fn unknown_format() {
        assert!("svg".parse::<ExportFormat>().is_err());
        assert_eq!("dot".parse::<ExportFormat>().unwrap(), ExportFormat::Dot);
    }

    #[test]
    fn neighbours() {
        let g = chain();
        assert_eq!(g.predecessors(2).collect::<Vec<_>>(), vec![1]);
        assert_eq!(g.successors(1).collect::<Vec<_>>(), vec![2]);
    }
}
