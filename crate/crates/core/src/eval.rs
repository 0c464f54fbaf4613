use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskGraphError};
use crate::graph::BinaryTaskGraph;

/// Edge-level agreement between a predicted and a reference graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `num / den`, with `0/0 = 0`.
pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn harmonic_mean(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl EdgeMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        EdgeMetrics {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
        }
    }

    /// Unweighted mean of precision, recall and F1; counts are summed.
    pub fn average(all: &[EdgeMetrics]) -> Option<EdgeMetrics> {
        if all.is_empty() {
            return None;
        }
        let k = all.len() as f64;
        Some(EdgeMetrics {
            tp: all.iter().map(|m| m.tp).sum(),
            fp: all.iter().map(|m| m.fp).sum(),
            fn_: all.iter().map(|m| m.fn_).sum(),
            precision: all.iter().map(|m| m.precision).sum::<f64>() / k,
            recall: all.iter().map(|m| m.recall).sum::<f64>() / k,
            f1: all.iter().map(|m| m.f1).sum::<f64>() / k,
        })
    }
}

pub fn edge_prf(pred: &BinaryTaskGraph, truth: &BinaryTaskGraph) -> Result<EdgeMetrics> {
    if pred.vocab().names() != truth.vocab().names() {
        return Err(TaskGraphError::ContractViolation(format!(
            "predicted graph over {:?} and reference graph over {:?} use different vocabularies",
            pred.vocab().names(),
            truth.vocab().names()
        )));
    }
    let tp = pred.edges().intersection(truth.edges()).count();
    let fp = pred.edges().len() - tp;
    let fn_ = truth.edges().len() - tp;
    Ok(EdgeMetrics::from_counts(tp, fp, fn_))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::vocab::Vocabulary;

    fn graph(edges: &[(usize, usize)]) -> BinaryTaskGraph {
        let vocab = Arc::new(Vocabulary::new(["A", "B"]).unwrap());
        BinaryTaskGraph::new(vocab, edges.iter().copied()).unwrap()
    }

    #[test]
    fn identical_graphs() {
        let g = graph(&[(1, 0), (2, 1), (3, 2)]);
        let m = edge_prf(&g, &g).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_thirds_fixture() {
        let pred = graph(&[(1, 0), (2, 0), (3, 2)]);
        let truth = graph(&[(1, 0), (2, 1), (3, 2)]);
        let m = edge_prf(&pred, &truth).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
        for v in [m.precision, m.recall, m.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_prediction() {
        let m = edge_prf(&graph(&[]), &graph(&[(1, 0)])).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn vocabulary_mismatch() {
        let other =
            BinaryTaskGraph::new(Arc::new(Vocabulary::new(["X", "Y"]).unwrap()), []).unwrap();
        assert!(matches!(
            edge_prf(&graph(&[]), &other),
            Err(TaskGraphError::ContractViolation(_))
        ));
    }

    #[test]
    fn serializes_fn_field() {
        let json = serde_json::to_value(EdgeMetrics::from_counts(1, 0, 1)).unwrap();
        assert_eq!(json["fn"], 1);
        assert_eq!(json.as_object().unwrap().len(), 6);
    }
}
