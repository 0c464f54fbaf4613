//! Direct optimization of the edge score matrix with Adam and
//! Sequence-Accuracy early stopping.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskGraphError};
use crate::graph::{BinaryTaskGraph, Edge};
use crate::likelihood::{loss_and_score_gradient, WeightedAdjacency};
use crate::matrix::{is_masked, SquareMatrix};
use crate::model::{TrainedModel, TrainingMeta};
use crate::postprocess::{binarize, postprocess};
use crate::reasoner::TrainingStats;
use crate::vocab::SequenceSet;

/// Edge scores `A`; masked cells hold `-inf` and are never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: SquareMatrix,
}

impl ScoreMatrix {
    /// All unmasked cells zero.
    pub fn new(size: usize) -> Self {
        let mut values = SquareMatrix::zeros(size);
        for i in 0..size {
            for j in 0..size {
                if is_masked(size, i, j) {
                    values.set(i, j, f64::NEG_INFINITY);
                }
            }
        }
        ScoreMatrix { values }
    }

    /// Copies the unmasked cells of `values`; masked cells become `-inf`.
    pub fn from_values(values: &SquareMatrix) -> Self {
        let size = values.size();
        let mut scores = ScoreMatrix::new(size);
        for i in 0..size {
            for j in 0..size {
                if !is_masked(size, i, j) {
                    scores.values.set(i, j, values.get(i, j));
                }
            }
        }
        scores
    }

    /// Unmasked cells drawn uniformly from `[0, scale)` in row-major order.
    pub fn random(size: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scores = ScoreMatrix::new(size);
        for i in 0..size {
            for j in 0..size {
                if !is_masked(size, i, j) {
                    scores.values.set(i, j, rng.gen::<f64>() * scale);
                }
            }
        }
        scores
    }

    pub fn size(&self) -> usize {
        self.values.size()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        is_masked(self.size(), i, j)
    }

    /// Sets an unmasked cell; masked cells are left at `-inf`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        if !self.is_masked(i, j) {
            self.values.set(i, j, value);
        }
    }

    pub fn values(&self) -> &SquareMatrix {
        &self.values
    }
}

/// Row softmax over unmasked cells; masked cells and the START row are 0.
pub fn masked_softmax(scores: &ScoreMatrix) -> Result<WeightedAdjacency> {
    let size = scores.size();
    if size < 3 {
        return Err(TaskGraphError::Structural(format!(
            "score matrix of size {size} leaves a row without unmasked cells"
        )));
    }
    let mut z = SquareMatrix::zeros(size);
    for i in 1..size {
        let mut max = f64::NEG_INFINITY;
        for j in (0..size).filter(|&j| !is_masked(size, i, j)) {
            let a = scores.get(i, j);
            if !a.is_finite() {
                return Err(TaskGraphError::InvalidInput(format!(
                    "score ({i},{j}) = {a} is not finite"
                )));
            }
            max = max.max(a);
        }
        let row = z.row_mut(i);
        let mut total = 0.0;
        for (j, cell) in row.iter_mut().enumerate() {
            if !is_masked(size, i, j) {
                *cell = (scores.get(i, j) - max).exp();
                total += *cell;
            }
        }
        row.iter_mut().for_each(|c| *c /= total);
    }
    Ok(WeightedAdjacency::from_trusted(z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// `None` picks [`default_beta`] for the dataset.
    pub beta: Option<f64>,
    pub sa_stop_threshold: f64,
    pub sa_patience: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            max_epochs: 1000,
            beta: None,
            sa_stop_threshold: 0.95,
            sa_patience: 25,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TaskGraphError::InvalidInput(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta <= 1.0) {
                return bad(format!("beta must lie in (0, 1], got {beta}"));
            }
        }
        if !(self.sa_stop_threshold > 0.0 && self.sa_stop_threshold <= 1.0) {
            return bad(format!(
                "sa_stop_threshold must lie in (0, 1], got {}",
                self.sa_stop_threshold
            ));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad(format!(
                "init_scale must be non-negative, got {}",
                self.init_scale
            ));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}

/// 0.005 when some sequence covers every key-step, 0.5 otherwise.
pub fn default_beta(seqs: &SequenceSet) -> f64 {
    let n = seqs.vocab().n();
    if seqs.iter().any(|s| s.interior().len() == n) {
        0.005
    } else {
        0.5
    }
}

/// Per-position compatibility between a prefix and the predicted
/// pre-conditions of the current step.
pub fn position_score(prefix: &[usize], predicted: &BTreeSet<usize>) -> f64 {
    match (prefix.is_empty(), predicted.is_empty()) {
        (true, true) => 1.0,
        (true, false) => -1.0,
        (false, false) => {
            let hits = prefix.iter().filter(|p| predicted.contains(p)).count();
            hits as f64 / predicted.len() as f64
        }
        (false, true) => 0.0,
    }
}

pub(crate) fn sequence_accuracy_from_edges<'a>(
    seqs: impl Iterator<Item = (&'a [usize], f64)>,
    size: usize,
    edges: &BTreeSet<Edge>,
) -> f64 {
    let mut predicted = vec![BTreeSet::new(); size];
    for &(i, j) in edges {
        predicted[i].insert(j);
    }
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for (steps, weight) in seqs {
        let positions = steps.len() - 1;
        let score: f64 = (1..steps.len())
            .map(|i| position_score(&steps[..i], &predicted[steps[i]]))
            .sum();
        total += weight * score / positions as f64;
        weight_sum += weight;
    }
    total / weight_sum
}

/// Mean over sequences of the mean per-position compatibility with the
/// graph's direct pre-conditions. Prefixes include START.
pub fn sequence_accuracy(seqs: &SequenceSet, graph: &BinaryTaskGraph) -> f64 {
    sequence_accuracy_from_edges(
        seqs.iter().map(|s| (s.steps(), 1.0)),
        graph.vocab().size(),
        graph.edges(),
    )
}

struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], frozen: impl Fn(usize) -> bool) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for k in 0..params.len() {
            if frozen(k) {
                continue;
            }
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Per-epoch record kept during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub sequence_accuracy: f64,
}

/// Score matrix optimization without post-processing.
pub struct Optimization {
    pub scores: ScoreMatrix,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub beta: f64,
    pub history: Vec<EpochRecord>,
}

impl Optimization {
    pub fn best(&self) -> EpochRecord {
        self.history[self.best_epoch]
    }
}

/// Runs batch gradient descent (Adam) on the score matrix and returns the
/// snapshot with the best Sequence Accuracy (ties go to the later epoch).
pub fn optimize_scores(seqs: &SequenceSet, config: &TrainConfig) -> Result<Optimization> {
    config.validate()?;
    let beta = config.beta.unwrap_or_else(|| default_beta(seqs));
    let size = seqs.vocab().size();

    // identical sequences contribute identical gradients
    let mut counts: BTreeMap<&[usize], f64> = BTreeMap::new();
    for s in seqs.iter() {
        *counts.entry(s.steps()).or_insert(0.0) += 1.0;
    }
    let batch: Vec<(&[usize], f64)> = counts.into_iter().collect();

    let mut scores = ScoreMatrix::random(size, config.init_scale, config.seed);
    let mut adam = Adam::new(size * size, config.learning_rate);
    let mut history = Vec::new();
    let mut best: Option<(usize, ScoreMatrix)> = None;
    let mut best_sa = f64::NEG_INFINITY;
    let mut since_improvement = 0usize;
    let mut stopped_early = false;
    let mut epoch = 0;

    loop {
        let z = masked_softmax(&scores)?;
        let (eval, grad) = loss_and_score_gradient(batch.iter().copied(), &z, beta);
        if !eval.loss.is_finite() {
            let cells = (0..size)
                .flat_map(|i| (0..size).map(move |j| (i, j)))
                .filter(|&(i, j)| !is_masked(size, i, j))
                .filter(|&(i, j)| !scores.get(i, j).is_finite() || !grad.get(i, j).is_finite())
                .collect();
            return Err(TaskGraphError::NonFiniteLoss { epoch, cells });
        }
        let sa = sequence_accuracy_from_edges(batch.iter().copied(), size, &binarize(&z));
        history.push(EpochRecord {
            epoch,
            loss: eval.loss,
            sequence_accuracy: sa,
        });

        if sa > best_sa {
            best_sa = sa;
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if sa >= best_sa {
            best = Some((epoch, scores.clone()));
        }
        if sa >= config.sa_stop_threshold && since_improvement >= config.sa_patience {
            stopped_early = true;
            break;
        }
        if epoch == config.max_epochs {
            break;
        }

        let frozen = |k: usize| is_masked(size, k / size, k % size);
        adam.update(scores.values.as_mut_slice(), grad.as_slice(), frozen);
        epoch += 1;
    }

    let (best_epoch, scores) = best.expect("at least one epoch is evaluated");
    Ok(Optimization {
        scores,
        best_epoch,
        epochs_run: epoch,
        stopped_early,
        beta,
        history,
    })
}

/// Full training pipeline: optimization, post-processing and the statistics
/// needed by the reasoner.
pub fn train_do(seqs: &SequenceSet, config: &TrainConfig) -> Result<TrainedModel> {
    let run = optimize_scores(seqs, config)?;
    let z_hat = masked_softmax(&run.scores)?;
    let graph = postprocess(&z_hat, seqs.vocab().clone())?;
    let stats = TrainingStats::compute(seqs, &z_hat);
    let best = run.best();
    let mut effective = config.clone();
    effective.beta = Some(run.beta);
    Ok(TrainedModel {
        vocab: seqs.vocab().clone(),
        z_hat,
        graph,
        stats,
        meta: TrainingMeta {
            epochs_run: run.epochs_run,
            best_epoch: run.best_epoch,
            stopped_early: run.stopped_early,
            final_sequence_accuracy: best.sequence_accuracy,
            final_loss: best.loss,
            initial_loss: run.history[0].loss,
            config: effective,
        },
        sequences: seqs.sequences().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::vocab::Vocabulary;

    #[test]
    fn softmax_examples() {
        // n = 1: row 1 has the single unmasked cell (1,0); row 2 has (2,0), (2,1)
        let mut a = ScoreMatrix::new(3);
        a.set(2, 0, 3.0f64.ln());
        a.set(2, 1, 0.0);
        a.set(0, 1, 99.0); // masked, ignored
        let z = masked_softmax(&a).unwrap();
        assert!((z.get(2, 0) - 0.75).abs() < 1e-12);
        assert!((z.get(2, 1) - 0.25).abs() < 1e-12);
        assert_eq!(z.get(1, 0), 1.0);
        assert!(z.matrix().row(0).iter().all(|&v| v == 0.0));

        let mut a = ScoreMatrix::new(4);
        a.set(1, 0, 2.0);
        a.set(1, 2, 2.0);
        let z = masked_softmax(&a).unwrap();
        assert!((z.get(1, 0) - 0.5).abs() < 1e-12);
        assert!((z.get(1, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_tiny_matrices() {
        assert!(matches!(
            masked_softmax(&ScoreMatrix::new(2)),
            Err(TaskGraphError::Structural(_))
        ));
    }

    #[test]
    fn position_score_cases() {
        let pred: BTreeSet<usize> = [1, 7].into_iter().collect();
        assert_eq!(position_score(&[0, 1], &pred), 0.5);
        assert_eq!(position_score(&[0], &BTreeSet::new()), 0.0);
        assert_eq!(position_score(&[], &BTreeSet::new()), 1.0);
        assert_eq!(position_score(&[], &pred), -1.0);
    }

    #[test]
    fn sa_is_one_for_the_generating_chain() {
        let vocab = Arc::new(Vocabulary::new(["A", "B"]).unwrap());
        let set = SequenceSet::from_interiors(vocab.clone(), &[vec![1, 2]]).unwrap();
        let g = BinaryTaskGraph::new(vocab, [(1, 0), (2, 1), (3, 2)]).unwrap();
        assert_eq!(sequence_accuracy(&set, &g), 1.0);
    }

    #[test]
    fn default_beta_rule() {
        let vocab = Arc::new(Vocabulary::new(["A", "B"]).unwrap());
        let complete = SequenceSet::from_interiors(vocab.clone(), &[vec![1], vec![2, 1]]).unwrap();
        assert_eq!(default_beta(&complete), 0.005);
        let partial = SequenceSet::from_interiors(vocab, &[vec![1], vec![2]]).unwrap();
        assert_eq!(default_beta(&partial), 0.5);
        let single = Arc::new(Vocabulary::new(["K1"]).unwrap());
        let set = SequenceSet::from_interiors(single, &[vec![1]]).unwrap();
        assert_eq!(default_beta(&set), 0.005);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::from_json_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(c.learning_rate, 0.1);
        assert_eq!(c.max_epochs, 1000);
        assert_eq!(c.sa_patience, 25);
        assert_eq!(c.seed, 7);
        assert!(TrainConfig::from_json_str(r#"{"beta": 0}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"learning_rate": -1}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"sa_stop_threshold": 1.5}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn random_init_is_seeded_and_masked() {
        let a = ScoreMatrix::random(5, 0.1, 3);
        let b = ScoreMatrix::random(5, 0.1, 3);
        assert_eq!(a, b);
        for i in 0..5 {
            for j in 0..5 {
                let v = a.get(i, j);
                if is_masked(5, i, j) {
                    assert_eq!(v, f64::NEG_INFINITY);
                } else {
                    assert!((0.0..0.1).contains(&v));
                }
            }
        }
    }
}
