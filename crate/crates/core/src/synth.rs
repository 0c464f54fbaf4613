//! Synthetic ground truth: random task graphs, sequences sampled from them
//! and exact linear-extension counting.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TaskGraphError};
use crate::graph::{BinaryTaskGraph, Edge};
use crate::postprocess::{transitive_reduce, wire_orphans};
use crate::vocab::{KeyStepSequence, SequenceSet, Vocabulary};

/// Interior-node limit for exact extension counting and enumeration.
pub const MAX_COUNTED_NODES: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthDAG {
    pub graph: BinaryTaskGraph,
    pub seed: u64,
    pub density: f64,
}

impl GroundTruthDAG {
    pub fn vocab(&self) -> &Arc<Vocabulary> {
        self.graph.vocab()
    }
}

/// Random order of `1..=n`; each order-compatible edge kept with probability
/// `density`; then transitively reduced and orphan-wired.
pub fn random_dag(n: usize, density: f64, seed: u64) -> Result<GroundTruthDAG> {
    if n < 1 {
        return Err(TaskGraphError::InvalidInput(
            "random_dag needs n >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(TaskGraphError::InvalidInput(format!(
            "density must lie in [0, 1], got {density}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(&mut rng);
    let mut edges = BTreeSet::new();
    for later in 1..n {
        for earlier in 0..later {
            if rng.gen_bool(density) {
                edges.insert((order[later], order[earlier]));
            }
        }
    }
    let size = n + 2;
    let edges = wire_orphans(size, &transitive_reduce(size, &edges)?);
    Ok(GroundTruthDAG {
        graph: BinaryTaskGraph::new(Arc::new(Vocabulary::numbered(n)?), edges)?,
        seed,
        density,
    })
}

/// `S <- K1 <- K2 <- ... <- Kn <- E`.
pub fn chain_dag(n: usize) -> Result<BinaryTaskGraph> {
    let edges: Vec<Edge> = (1..=n + 1).map(|i| (i, i - 1)).collect();
    BinaryTaskGraph::new(Arc::new(Vocabulary::numbered(n)?), edges)
}

/// One sequence drawn by repeatedly choosing uniformly among the unobserved
/// key-steps whose pre-conditions are all observed. Stops at END.
pub fn sample_sequence<R: Rng>(graph: &BinaryTaskGraph, rng: &mut R) -> Result<KeyStepSequence> {
    let vocab = graph.vocab();
    let size = vocab.size();
    let end = vocab.end();
    let mut observed = vec![false; size];
    observed[0] = true;
    let mut steps = vec![0];
    loop {
        let available: Vec<usize> = (1..size)
            .filter(|&v| !observed[v] && graph.predecessors(v).all(|p| observed[p]))
            .collect();
        let Some(&next) = available.choose(rng) else {
            return Err(TaskGraphError::Structural(
                "no key-step is available before END".into(),
            ));
        };
        observed[next] = true;
        steps.push(next);
        if next == end {
            break;
        }
    }
    KeyStepSequence::new(steps, vocab.n())
}

pub fn sample_topological_sorts(
    graph: &BinaryTaskGraph,
    k: usize,
    seed: u64,
) -> Result<SequenceSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..k)
        .map(|_| sample_sequence(graph, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    SequenceSet::new(graph.vocab().clone(), sequences)
}

/// Bitmask of the interior pre-conditions of every interior node.
fn interior_requirements(graph: &BinaryTaskGraph) -> Result<Vec<u32>> {
    let n = graph.vocab().n();
    if n > MAX_COUNTED_NODES {
        return Err(TaskGraphError::Capacity(format!(
            "{n} key-steps exceed the limit of {MAX_COUNTED_NODES} for exact enumeration"
        )));
    }
    let mut req = vec![0u32; n];
    for &(i, j) in graph.edges() {
        if (1..=n).contains(&i) && (1..=n).contains(&j) {
            req[i - 1] |= 1 << (j - 1);
        }
    }
    Ok(req)
}

/// Number of orderings of the interior key-steps that respect every edge.
pub fn count_linear_extensions(graph: &BinaryTaskGraph) -> Result<u128> {
    let req = interior_requirements(graph)?;
    let n = req.len();
    let full = (1usize << n) - 1;
    // ways[mask]: orderings of the remaining nodes once `mask` is placed
    let mut ways = vec![0u128; full + 1];
    ways[full] = 1;
    for mask in (0..full).rev() {
        ways[mask] = (0..n)
            .filter(|&v| mask & (1 << v) == 0 && (req[v] as usize) & !mask == 0)
            .map(|v| ways[mask | (1 << v)])
            .sum();
    }
    Ok(ways[0])
}

/// Every linear extension as an interior index list, in lexicographic order.
pub fn linear_extensions(graph: &BinaryTaskGraph) -> Result<Vec<Vec<usize>>> {
    let req = interior_requirements(graph)?;
    let n = req.len();
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(n);
    fn walk(req: &[u32], mask: u32, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == req.len() {
            out.push(prefix.clone());
            return;
        }
        for v in 0..req.len() {
            if mask & (1 << v) == 0 && req[v] & !mask == 0 {
                prefix.push(v + 1);
                walk(req, mask | (1 << v), prefix, out);
                prefix.pop();
            }
        }
    }
    walk(&req, 0, &mut prefix, &mut out);
    debug_assert!(out.iter().all(|e| e.len() == n));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::is_acyclic;

    fn graph(n: usize, edges: &[Edge]) -> BinaryTaskGraph {
        BinaryTaskGraph::new(
            Arc::new(Vocabulary::numbered(n).unwrap()),
            edges.iter().copied(),
        )
        .unwrap()
    }

    #[test]
    fn counting_examples() {
        assert_eq!(count_linear_extensions(&chain_dag(4).unwrap()).unwrap(), 1);
        let antichain = graph(3, &[(1, 0), (2, 0), (3, 0), (4, 1), (4, 2), (4, 3)]);
        assert_eq!(count_linear_extensions(&antichain).unwrap(), 6);
        // A=1, B=2 between S and C=3
        let diamond = graph(3, &[(1, 0), (2, 0), (3, 1), (3, 2), (4, 3)]);
        assert_eq!(count_linear_extensions(&diamond).unwrap(), 2);
        assert_eq!(
            linear_extensions(&diamond).unwrap(),
            vec![vec![1, 2, 3], vec![2, 1, 3]]
        );
        assert!(matches!(
            count_linear_extensions(&chain_dag(13).unwrap()),
            Err(TaskGraphError::Capacity(_))
        ));
    }

    #[test]
    fn random_dag_is_seeded_and_valid() {
        for seed in 0..20 {
            let a = random_dag(6, 0.3, seed).unwrap();
            let b = random_dag(6, 0.3, seed).unwrap();
            assert_eq!(a.graph, b.graph);
            assert!(is_acyclic(8, a.graph.edges()));
            let reduced = transitive_reduce(8, a.graph.edges()).unwrap();
            assert_eq!(&reduced, a.graph.edges());
            assert_eq!(&wire_orphans(8, a.graph.edges()), a.graph.edges());
        }
        let two = random_dag(2, 1.0, 5).unwrap();
        assert!(is_acyclic(4, two.graph.edges()));
    }

    #[test]
    fn zero_density_wires_every_node_to_start_and_end() {
        let g = random_dag(4, 0.0, 1).unwrap();
        let expected: BTreeSet<Edge> = (1..=4).flat_map(|i| [(i, 0), (5, i)]).collect();
        assert_eq!(g.graph.edges(), &expected);
    }

    #[test]
    fn chain_has_a_single_sampled_order() {
        let set = sample_topological_sorts(&chain_dag(4).unwrap(), 5, 3).unwrap();
        assert!(set.iter().all(|s| s.interior() == [1, 2, 3, 4]));
    }

    #[test]
    fn fork_produces_both_orders() {
        let fork = graph(2, &[(1, 0), (2, 0), (3, 1), (3, 2)]);
        let set = sample_topological_sorts(&fork, 400, 11).unwrap();
        let first_a = set.iter().filter(|s| s.interior() == [1, 2]).count();
        // two linear extensions, each drawn with probability 1/2
        assert_eq!(count_linear_extensions(&fork).unwrap(), 2);
        assert!((150..=250).contains(&first_a), "{first_a}");
    }
}
