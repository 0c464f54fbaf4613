//! Sequence likelihood under a weighted task graph, the TGML loss and its
//! analytic gradient with respect to the row-softmax scores.
//!
//! Convention: entry `(i, j)` of the adjacency is the weight of the edge
//! `K_i -> K_j`, read as "`K_j` is a pre-condition of `K_i`".

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskGraphError};
use crate::graph::BinaryTaskGraph;
use crate::matrix::{is_masked, SquareMatrix};
use crate::trainer::ScoreMatrix;
use crate::vocab::{KeyStepSequence, SequenceSet};

/// Lower clamp applied to both inner sums of the loss before taking logs.
pub const LOG_EPSILON: f64 = 1e-12;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Weighted adjacency `Z` over `n + 2` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SquareMatrix", into = "SquareMatrix")]
pub struct WeightedAdjacency {
    values: SquareMatrix,
}

impl WeightedAdjacency {
    /// Strict constructor: masked cells must be zero, entries in `[0, 1]` and
    /// every row except START must sum to one.
    pub fn new(values: SquareMatrix) -> Result<Self> {
        let z = WeightedAdjacency::unnormalized(values)?;
        for i in 1..z.size() {
            let sum: f64 = z.values.row(i).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(TaskGraphError::InvalidInput(format!(
                    "row {i} of the adjacency sums to {sum}, expected 1"
                )));
            }
        }
        Ok(z)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        WeightedAdjacency::new(SquareMatrix::from_rows(rows)?)
    }

    /// Relaxed constructor used by scoring code: only checks shape,
    /// non-negativity, finiteness and the structural mask.
    pub fn unnormalized(values: SquareMatrix) -> Result<Self> {
        let size = values.size();
        if size < 3 {
            return Err(TaskGraphError::InvalidInput(format!(
                "adjacency of size {size} has no key-steps"
            )));
        }
        for i in 0..size {
            for j in 0..size {
                let v = values.get(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(TaskGraphError::InvalidInput(format!(
                        "adjacency entry ({i},{j}) = {v} is not a finite non-negative weight"
                    )));
                }
                if is_masked(size, i, j) && v != 0.0 {
                    return Err(TaskGraphError::InvalidInput(format!(
                        "masked adjacency entry ({i},{j}) must be 0, found {v}"
                    )));
                }
            }
        }
        Ok(WeightedAdjacency { values })
    }

    pub(crate) fn from_trusted(values: SquareMatrix) -> Self {
        WeightedAdjacency { values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn size(&self) -> usize {
        self.values.size()
    }

    /// Number of labelled key-steps.
    pub fn n(&self) -> usize {
        self.values.size() - 2
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.to_rows()
    }
}

impl TryFrom<SquareMatrix> for WeightedAdjacency {
    type Error = TaskGraphError;

    fn try_from(values: SquareMatrix) -> Result<Self> {
        WeightedAdjacency::unnormalized(values)
    }
}

impl From<WeightedAdjacency> for SquareMatrix {
    fn from(z: WeightedAdjacency) -> Self {
        z.values
    }
}

/// Set of key-steps observed so far. START is always observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationState {
    observed: Vec<bool>,
}

impl ObservationState {
    /// State right after START over `size = n + 2` nodes.
    pub fn new(size: usize) -> Self {
        let mut observed = vec![false; size];
        observed[0] = true;
        ObservationState { observed }
    }

    pub fn from_indices(size: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut state = ObservationState::new(size);
        for i in indices {
            state.insert(i)?;
        }
        Ok(state)
    }

    pub fn insert(&mut self, i: usize) -> Result<()> {
        match self.observed.get_mut(i) {
            Some(slot) => {
                *slot = true;
                Ok(())
            }
            None => Err(TaskGraphError::ContractViolation(format!(
                "index {i} outside state of size {}",
                self.observed.len()
            ))),
        }
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.observed.get(i).copied().unwrap_or(false)
    }

    pub fn size(&self) -> usize {
        self.observed.len()
    }

    pub fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.observed.len()).filter(|&i| self.observed[i])
    }

    pub fn unobserved(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.observed.len()).filter(|&i| !self.observed[i])
    }
}

fn check_state(z: &WeightedAdjacency, state: &ObservationState) -> Result<()> {
    if state.size() != z.size() {
        return Err(TaskGraphError::ContractViolation(format!(
            "state of size {} used with adjacency of size {}",
            state.size(),
            z.size()
        )));
    }
    Ok(())
}

/// Sum of the weights from `i` to every observed key-step.
pub fn feasibility(i: usize, state: &ObservationState, z: &WeightedAdjacency) -> Result<f64> {
    check_state(z, state)?;
    if i >= z.size() {
        return Err(TaskGraphError::ContractViolation(format!(
            "index {i} out of range"
        )));
    }
    if state.contains(i) {
        return Err(TaskGraphError::ContractViolation(format!(
            "feasibility requested for already observed key-step {i}"
        )));
    }
    Ok(raw_feasibility(i, state, z))
}

fn raw_feasibility(i: usize, state: &ObservationState, z: &WeightedAdjacency) -> f64 {
    state.observed().map(|j| z.get(i, j)).sum()
}

fn total_feasibility(state: &ObservationState, z: &WeightedAdjacency) -> f64 {
    state
        .unobserved()
        .map(|h| raw_feasibility(h, state, z))
        .sum()
}

/// Probability that `i` is the next key-step given the observed set.
pub fn next_step_prob(i: usize, state: &ObservationState, z: &WeightedAdjacency) -> Result<f64> {
    let numerator = feasibility(i, state, z)?;
    let denominator = total_feasibility(state, z);
    if denominator <= 0.0 {
        return Err(TaskGraphError::DegenerateState {
            position: None,
            message: "every unobserved key-step has zero feasibility".into(),
        });
    }
    Ok(numerator / denominator)
}

/// Next-step probability under a binary graph: uniform over the unobserved
/// key-steps whose pre-conditions are all observed.
pub fn unweighted_next_prob(
    i: usize,
    state: &ObservationState,
    graph: &BinaryTaskGraph,
) -> Result<f64> {
    let size = graph.vocab().size();
    if state.size() != size {
        return Err(TaskGraphError::ContractViolation(format!(
            "state of size {} used with graph of size {size}",
            state.size()
        )));
    }
    if state.contains(i) {
        return Err(TaskGraphError::ContractViolation(format!(
            "probability requested for already observed key-step {i}"
        )));
    }
    let ready = |h: usize| graph.predecessors(h).all(|j| state.contains(j));
    let possible = state.unobserved().filter(|&h| ready(h)).count();
    if possible == 0 {
        return Err(TaskGraphError::DegenerateState {
            position: None,
            message: "no unobserved key-step has all pre-conditions satisfied".into(),
        });
    }
    Ok(if ready(i) { 1.0 / possible as f64 } else { 0.0 })
}

/// `log P(y | Z)`. A zero numerator yields `-inf`; a zero denominator is an
/// error carrying the offending position.
pub fn sequence_log_likelihood(seq: &KeyStepSequence, z: &WeightedAdjacency) -> Result<f64> {
    steps_log_likelihood(seq.steps(), z)
}

pub(crate) fn steps_log_likelihood(steps: &[usize], z: &WeightedAdjacency) -> Result<f64> {
    let size = z.size();
    if steps.first() != Some(&0) {
        return Err(TaskGraphError::InvalidInput(
            "sequence must start with START".into(),
        ));
    }
    let mut feas = vec![0.0; size];
    let mut observed = vec![false; size];
    let mut log_lik = 0.0;
    for t in 1..steps.len() {
        let prev = steps[t - 1];
        observed[prev] = true;
        for (h, f) in feas.iter_mut().enumerate() {
            *f += z.get(h, prev);
        }
        let denominator: f64 = (0..size).filter(|&h| !observed[h]).map(|h| feas[h]).sum();
        if denominator <= 0.0 {
            return Err(TaskGraphError::DegenerateState {
                position: Some(t),
                message: "every unobserved key-step has zero feasibility".into(),
            });
        }
        log_lik += (feas[steps[t]] / denominator).ln();
    }
    Ok(log_lik)
}

/// Loss value plus the number of inner sums that hit the log clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEvaluation {
    pub loss: f64,
    pub clamped: usize,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(TaskGraphError::InvalidInput(format!(
            "beta must be positive, got {beta}"
        )));
    }
    Ok(())
}

/// TGML loss of a sequence set.
pub fn tgml_loss(seqs: &SequenceSet, z: &WeightedAdjacency, beta: f64) -> Result<f64> {
    tgml_loss_with_diagnostics(seqs, z, beta).map(|e| e.loss)
}

pub fn tgml_loss_with_diagnostics(
    seqs: &SequenceSet,
    z: &WeightedAdjacency,
    beta: f64,
) -> Result<LossEvaluation> {
    if seqs.is_empty() {
        return Err(TaskGraphError::InvalidInput("empty sequence set".into()));
    }
    check_beta(beta)?;
    Ok(weighted_loss(
        seqs.iter().map(|s| (s.steps(), 1.0)),
        z,
        beta,
        None,
    ))
}

/// Per-position sums shared by the loss and the gradient.
struct StepTerms {
    positive: f64,
    negative: f64,
}

fn step_terms(steps: &[usize], z: &WeightedAdjacency, out: &mut Vec<StepTerms>) {
    let size = z.size();
    let mut feas = vec![0.0; size];
    let mut observed = vec![false; size];
    out.clear();
    for t in 1..steps.len() {
        let prev = steps[t - 1];
        observed[prev] = true;
        for (h, f) in feas.iter_mut().enumerate() {
            *f += z.get(h, prev);
        }
        let negative = (0..size).filter(|&h| !observed[h]).map(|h| feas[h]).sum();
        out.push(StepTerms {
            positive: feas[steps[t]],
            negative,
        });
    }
}

/// Loss over `(sequence, multiplicity)` pairs; optionally accumulates
/// `dLoss/dZ` into `grad_z`.
pub(crate) fn weighted_loss<'a>(
    seqs: impl Iterator<Item = (&'a [usize], f64)>,
    z: &WeightedAdjacency,
    beta: f64,
    mut grad_z: Option<&mut SquareMatrix>,
) -> LossEvaluation {
    let size = z.size();
    let mut loss = 0.0;
    let mut clamped = 0;
    let mut terms = Vec::new();
    let mut position = vec![usize::MAX; size];
    let mut cumulative = Vec::new();

    for (steps, weight) in seqs {
        step_terms(steps, z, &mut terms);
        for term in &terms {
            let pos = if term.positive < LOG_EPSILON {
                clamped += 1;
                LOG_EPSILON
            } else {
                term.positive
            };
            let neg = if term.negative < LOG_EPSILON {
                clamped += 1;
                LOG_EPSILON
            } else {
                term.negative
            };
            loss -= weight * (pos.ln() - beta * neg.ln());
        }

        let Some(grad) = grad_z.as_deref_mut() else {
            continue;
        };
        let last = steps.len() - 1;
        position.iter_mut().for_each(|p| *p = usize::MAX);
        for (t, &s) in steps.iter().enumerate() {
            position[s] = t;
        }

        // positive term: -w / pos_t on (y_t, j) for every j observed before t
        for t in 1..=last {
            let term = &terms[t - 1];
            if term.positive >= LOG_EPSILON {
                let c = weight / term.positive;
                for &j in &steps[..t] {
                    grad.add(steps[t], j, -c);
                }
            }
        }

        // contrastive term: cell (h, j) collects beta*w/neg_t over every t with
        // j observed (pos(j) < t) and h unobserved (pos(h) >= t)
        cumulative.clear();
        cumulative.push(0.0);
        let mut acc = 0.0;
        for term in &terms {
            if term.negative >= LOG_EPSILON {
                acc += beta * weight / term.negative;
            }
            cumulative.push(acc);
        }
        for h in 0..size {
            let reach = position[h].min(last);
            for &j in &steps[..reach] {
                let from = position[j];
                grad.add(h, j, cumulative[reach] - cumulative[from]);
            }
        }
    }
    LossEvaluation { loss, clamped }
}

/// `dLoss/dA` through the masked row softmax. Masked cells are exactly 0.
pub fn tgml_gradient(seqs: &SequenceSet, scores: &ScoreMatrix, beta: f64) -> Result<SquareMatrix> {
    if seqs.is_empty() {
        return Err(TaskGraphError::InvalidInput("empty sequence set".into()));
    }
    check_beta(beta)?;
    if seqs.vocab().size() != scores.size() {
        return Err(TaskGraphError::ContractViolation(format!(
            "score matrix of size {} does not match vocabulary size {}",
            scores.size(),
            seqs.vocab().size()
        )));
    }
    let z = crate::trainer::masked_softmax(scores)?;
    let (_, grad) = loss_and_score_gradient(seqs.iter().map(|s| (s.steps(), 1.0)), &z, beta);
    Ok(grad)
}

pub(crate) fn loss_and_score_gradient<'a>(
    seqs: impl Iterator<Item = (&'a [usize], f64)>,
    z: &WeightedAdjacency,
    beta: f64,
) -> (LossEvaluation, SquareMatrix) {
    let size = z.size();
    let mut grad_z = SquareMatrix::zeros(size);
    let eval = weighted_loss(seqs, z, beta, Some(&mut grad_z));
    let mut grad_a = SquareMatrix::zeros(size);
    for i in 1..size {
        let inner: f64 = (0..size)
            .filter(|&j| !is_masked(size, i, j))
            .map(|j| z.get(i, j) * grad_z.get(i, j))
            .sum();
        for j in 0..size {
            if !is_masked(size, i, j) {
                grad_a.set(i, j, z.get(i, j) * (grad_z.get(i, j) - inner));
            }
        }
    }
    (eval, grad_a)
}

#[cfg(test)]
pub(crate) mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::vocab::Vocabulary;

    /// S=0, A=1, B=2, E=3.
    pub(crate) fn toy_z() -> WeightedAdjacency {
        WeightedAdjacency::from_rows(vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.3, 0.7, 0.0, 0.0],
            vec![0.0, 0.2, 0.8, 0.0],
        ])
        .unwrap()
    }

    fn toy_set(interiors: &[Vec<usize>]) -> SequenceSet {
        let vocab = Arc::new(Vocabulary::new(["A", "B"]).unwrap());
        SequenceSet::from_interiors(vocab, interiors).unwrap()
    }

    fn state(indices: &[usize]) -> ObservationState {
        ObservationState::from_indices(4, indices.iter().copied()).unwrap()
    }

    #[test]
    fn toy_feasibility() {
        let z = toy_z();
        assert_eq!(feasibility(1, &state(&[0]), &z).unwrap(), 1.0);
        assert_eq!(feasibility(3, &state(&[0]), &z).unwrap(), 0.0);
        assert!(matches!(
            feasibility(0, &state(&[0]), &z),
            Err(TaskGraphError::ContractViolation(_))
        ));
    }

    #[test]
    fn toy_next_step_prob() {
        let z = toy_z();
        assert!((next_step_prob(1, &state(&[0]), &z).unwrap() - 1.0 / 1.3).abs() < 1e-12);
        assert!((next_step_prob(2, &state(&[0, 1]), &z).unwrap() - 1.0 / 1.2).abs() < 1e-12);
        assert!((next_step_prob(3, &state(&[0, 1, 2]), &z).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_is_degenerate() {
        // only E left and E has no weight on observed nodes
        let z = WeightedAdjacency::unnormalized(
            SquareMatrix::from_rows(vec![
                vec![0.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0],
            ])
            .unwrap(),
        )
        .unwrap();
        let s = ObservationState::from_indices(3, [0, 1]).unwrap();
        assert!(matches!(
            next_step_prob(2, &s, &z),
            Err(TaskGraphError::DegenerateState { .. })
        ));
    }

    #[test]
    fn toy_sequence_likelihood() {
        let z = toy_z();
        let sab = KeyStepSequence::new(vec![0, 1, 2, 3], 2).unwrap();
        let sba = KeyStepSequence::new(vec![0, 2, 1, 3], 2).unwrap();
        let ll = sequence_log_likelihood(&sab, &z).unwrap();
        assert!((ll - (1.0f64 / 1.3 * (1.0 / 1.2)).ln()).abs() < 1e-12);
        assert!((ll - (-0.44469)).abs() < 1e-5);
        let ll_ba = sequence_log_likelihood(&sba, &z).unwrap();
        assert!(ll_ba < ll);
    }

    #[test]
    fn single_step_vocabulary_has_unit_likelihood() {
        let z = WeightedAdjacency::from_rows(vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let seq = KeyStepSequence::new(vec![0, 1, 2], 1).unwrap();
        assert_eq!(sequence_log_likelihood(&seq, &z).unwrap(), 0.0);
    }

    #[test]
    fn toy_loss_and_beta_limit() {
        let z = toy_z();
        let set = toy_set(&[vec![1, 2]]);
        let loss = tgml_loss(&set, &z, 1.0).unwrap();
        assert!((loss - (1.3f64.ln() + 1.2f64.ln())).abs() < 1e-12);

        // positive logs: log 1 + log 1 + log 1 = 0
        let tiny = tgml_loss(&set, &z, 1e-12).unwrap();
        assert!(tiny.abs() < 1e-9);
        assert!(tgml_loss(&set, &z, 0.0).is_err());
    }

    #[test]
    fn loss_counts_clamped_terms() {
        let set = toy_set(&[vec![1, 2]]);
        assert_eq!(
            tgml_loss_with_diagnostics(&set, &toy_z(), 1.0)
                .unwrap()
                .clamped,
            0
        );

        // E depends only on A; sequence S B E never observes A
        let z = WeightedAdjacency::from_rows(vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let partial = toy_set(&[vec![2]]);
        let eval = tgml_loss_with_diagnostics(&partial, &z, 1.0).unwrap();
        assert_eq!(eval.clamped, 1);
        assert!(eval.loss.is_finite());
        assert!(eval.loss <= 4.0 * LOG_EPSILON.ln().abs());
    }
}
