//! Weighted adjacency to binary DAG: threshold at `1/n`, break cycles,
//! transitive reduction, orphan wiring.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Result, TaskGraphError};
use crate::graph::{is_acyclic, transitive_closure, BinaryTaskGraph, Edge};
use crate::likelihood::WeightedAdjacency;
use crate::matrix::is_masked;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PostprocessOptions {
    /// When a key-step has exactly two pre-conditions and one is START, drop
    /// the other one. Intended for noisy logs.
    pub prune_start_pair: bool,
}

/// Edges whose weight reaches `1/n`.
pub fn binarize(z: &WeightedAdjacency) -> BTreeSet<Edge> {
    let size = z.size();
    let threshold = 1.0 / z.n() as f64;
    let mut edges = BTreeSet::new();
    for i in 0..size {
        for j in 0..size {
            if !is_masked(size, i, j) && z.get(i, j) >= threshold {
                edges.insert((i, j));
            }
        }
    }
    edges
}

fn adjacency(size: usize, edges: &BTreeSet<Edge>) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); size];
    for &(i, j) in edges {
        adj[i].push(j);
    }
    adj
}

/// First cycle met by a depth-first search visiting nodes and neighbours in
/// ascending order, as its list of edges.
pub fn find_cycle(size: usize, edges: &BTreeSet<Edge>) -> Option<Vec<Edge>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let adj = adjacency(size, edges);
    let mut mark = vec![Mark::New; size];
    for root in 0..size {
        if mark[root] != Mark::New {
            continue;
        }
        // (node, next neighbour slot)
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::Active;
        while let Some(&mut (v, ref mut slot)) = stack.last_mut() {
            if let Some(&w) = adj[v].get(*slot) {
                *slot += 1;
                match mark[w] {
                    Mark::New => {
                        mark[w] = Mark::Active;
                        stack.push((w, 0));
                    }
                    Mark::Active => {
                        let from = stack.iter().position(|&(u, _)| u == w).unwrap();
                        let path: Vec<usize> = stack[from..].iter().map(|&(u, _)| u).collect();
                        let mut cycle: Vec<Edge> = path.windows(2).map(|p| (p[0], p[1])).collect();
                        cycle.push((v, w));
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// Repeatedly removes the lowest-weight edge of the first cycle found until
/// the graph is acyclic. Ties go to the lexicographically smallest edge.
pub fn break_cycles(edges: &BTreeSet<Edge>, z: &WeightedAdjacency) -> BTreeSet<Edge> {
    let size = z.size();
    let mut edges = edges.clone();
    while let Some(cycle) = find_cycle(size, &edges) {
        let weakest = cycle
            .into_iter()
            .min_by(|a, b| z.get(a.0, a.1).total_cmp(&z.get(b.0, b.1)).then(a.cmp(b)))
            .expect("cycles have at least one edge");
        edges.remove(&weakest);
    }
    edges
}

/// Removes every edge implied by a longer path. Input must be acyclic.
pub fn transitive_reduce(size: usize, edges: &BTreeSet<Edge>) -> Result<BTreeSet<Edge>> {
    if !is_acyclic(size, edges) {
        return Err(TaskGraphError::ContractViolation(
            "transitive reduction requires an acyclic graph".into(),
        ));
    }
    let reach = transitive_closure(size, edges);
    let adj = adjacency(size, edges);
    Ok(edges
        .iter()
        .copied()
        .filter(|&(a, c)| !adj[a].iter().any(|&b| b != c && reach[b][c]))
        .collect())
}

/// Gives every key-step without pre-conditions an edge to START and every
/// key-step nobody depends on an edge from END.
pub fn wire_orphans(size: usize, edges: &BTreeSet<Edge>) -> BTreeSet<Edge> {
    let end = size - 1;
    let mut has_out = vec![false; size];
    let mut has_in = vec![false; size];
    for &(i, j) in edges {
        has_out[i] = true;
        has_in[j] = true;
    }
    let mut wired = edges.clone();
    for i in 1..end {
        if !has_out[i] {
            wired.insert((i, 0));
        }
        if !has_in[i] {
            wired.insert((end, i));
        }
    }
    wired
}

fn prune_start_pairs(size: usize, edges: &BTreeSet<Edge>) -> BTreeSet<Edge> {
    let mut pruned = edges.clone();
    for i in 1..size {
        let pre: Vec<usize> = edges.range((i, 0)..(i + 1, 0)).map(|&(_, j)| j).collect();
        if pre.len() == 2 && pre[0] == 0 {
            pruned.remove(&(i, pre[1]));
        }
    }
    pruned
}

pub fn postprocess(z: &WeightedAdjacency, vocab: Arc<Vocabulary>) -> Result<BinaryTaskGraph> {
    postprocess_with(z, vocab, PostprocessOptions::default())
}

/// binarize, break cycles, (optional START-pair pruning), transitive
/// reduction, orphan wiring. A last reduction pass drops edges made
/// redundant by the wiring.
pub fn postprocess_with(
    z: &WeightedAdjacency,
    vocab: Arc<Vocabulary>,
    options: PostprocessOptions,
) -> Result<BinaryTaskGraph> {
    let size = z.size();
    if vocab.size() != size {
        return Err(TaskGraphError::ContractViolation(format!(
            "vocabulary of size {} does not match adjacency of size {size}",
            vocab.size()
        )));
    }
    let mut edges = break_cycles(&binarize(z), z);
    if options.prune_start_pair {
        edges = prune_start_pairs(size, &edges);
    }
    let edges = transitive_reduce(size, &edges)?;
    let edges = transitive_reduce(size, &wire_orphans(size, &edges))?;
    BinaryTaskGraph::new(vocab, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::tests::toy_z;
    use crate::matrix::SquareMatrix;

    fn set(edges: &[Edge]) -> BTreeSet<Edge> {
        edges.iter().copied().collect()
    }

    fn weights(size: usize, cells: &[(usize, usize, f64)]) -> WeightedAdjacency {
        let mut m = SquareMatrix::zeros(size);
        for &(i, j, w) in cells {
            m.set(i, j, w);
        }
        WeightedAdjacency::unnormalized(m).unwrap()
    }

    #[test]
    fn binarize_toy() {
        assert_eq!(binarize(&toy_z()), set(&[(1, 0), (2, 1), (3, 2)]));
    }

    #[test]
    fn binarize_uniform_rows_below_threshold() {
        // n = 2, row E spread over three cells: 1/3 < 1/2
        let z = WeightedAdjacency::from_rows(vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0],
        ])
        .unwrap();
        assert_eq!(binarize(&z), set(&[(1, 0), (2, 0)]));
    }

    #[test]
    fn binarize_single_key_step_needs_full_mass() {
        let z = WeightedAdjacency::from_rows(vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.4, 0.6, 0.0],
        ])
        .unwrap();
        assert_eq!(binarize(&z), set(&[(1, 0)]));
    }

    #[test]
    fn transitive_reduce_examples() {
        // A=1 depends on B=2 and C=3, B depends on C
        let out = transitive_reduce(5, &set(&[(1, 2), (1, 3), (2, 3)])).unwrap();
        assert_eq!(out, set(&[(1, 2), (2, 3)]));
        let chain = set(&[(1, 2), (2, 3)]);
        assert_eq!(transitive_reduce(5, &chain).unwrap(), chain);
        // diamond D=4 over B=2, C=3 over A=1, plus D->A
        let out = transitive_reduce(6, &set(&[(4, 2), (4, 3), (2, 1), (3, 1), (4, 1)])).unwrap();
        assert_eq!(out, set(&[(4, 2), (4, 3), (2, 1), (3, 1)]));
        assert!(transitive_reduce(4, &set(&[(1, 2), (2, 1)])).is_err());
    }

    #[test]
    fn break_cycles_examples() {
        let z = weights(4, &[(1, 2, 0.6), (2, 1, 0.4)]);
        assert_eq!(break_cycles(&set(&[(1, 2), (2, 1)]), &z), set(&[(1, 2)]));

        let acyclic = set(&[(1, 0), (2, 1)]);
        assert_eq!(break_cycles(&acyclic, &z), acyclic);

        let z = weights(5, &[(1, 2, 0.5), (2, 3, 0.5), (3, 1, 0.2)]);
        assert_eq!(
            break_cycles(&set(&[(1, 2), (2, 3), (3, 1)]), &z),
            set(&[(1, 2), (2, 3)])
        );
    }

    #[test]
    fn break_cycles_tie_goes_to_smallest_edge() {
        let z = weights(4, &[(1, 2, 0.5), (2, 1, 0.5)]);
        assert_eq!(break_cycles(&set(&[(1, 2), (2, 1)]), &z), set(&[(2, 1)]));
    }

    #[test]
    fn wire_orphans_examples() {
        // X=1 isolated
        assert_eq!(wire_orphans(3, &BTreeSet::new()), set(&[(1, 0), (2, 1)]));
        // B=2 depends on A=1, A depends on S: B gets only E->B
        let out = wire_orphans(4, &set(&[(1, 0), (2, 1)]));
        assert_eq!(out, set(&[(1, 0), (2, 1), (3, 2)]));
        let full = set(&[(1, 0), (2, 1), (3, 2)]);
        assert_eq!(wire_orphans(4, &full), full);
    }

    #[test]
    fn postprocess_toy_is_chain() {
        let vocab = Arc::new(Vocabulary::new(["A", "B"]).unwrap());
        let g = postprocess(&toy_z(), vocab).unwrap();
        assert_eq!(g.edges(), &set(&[(1, 0), (2, 1), (3, 2)]));
    }

    #[test]
    fn prune_start_pair_drops_the_other_condition() {
        // n=3: C=3 depends on S and A (0.5 each); A, B depend on S
        let z = WeightedAdjacency::from_rows(vec![
            vec![0.0; 5],
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.5, 0.0],
        ])
        .unwrap();
        let vocab = Arc::new(Vocabulary::new(["A", "B", "C"]).unwrap());
        let plain = postprocess(&z, vocab.clone()).unwrap();
        assert!(plain.has_edge(3, 1));
        let pruned = postprocess_with(
            &z,
            vocab,
            PostprocessOptions {
                prune_start_pair: true,
            },
        )
        .unwrap();
        assert!(!pruned.has_edge(3, 1));
        assert!(pruned.has_edge(3, 0));
    }
}
