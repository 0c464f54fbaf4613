//! Procedure-understanding queries answered from a trained model: previous,
//! optional, mistaken, missing and future key-steps.
//!
//! Weighted queries read `Ẑ` before post-processing; [`binary_scores`] reads
//! the post-processed graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskGraphError};
use crate::graph::BinaryTaskGraph;
use crate::likelihood::{
    next_step_prob, sequence_log_likelihood, steps_log_likelihood, ObservationState,
    WeightedAdjacency,
};
use crate::model::TrainedModel;
use crate::vocab::{SequenceSet, Vocabulary};

/// Default weight of the global optionality score.
pub const DEFAULT_ALPHA: f64 = 0.7;

/// Key-step frequencies and optionality votes gathered over the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    /// Fraction of training sequences containing each node, indexed `0..n+2`.
    pub frequency: Vec<f64>,
    pub count_optional: Vec<u32>,
    pub count_mandatory: Vec<u32>,
}

impl TrainingStats {
    pub fn compute(seqs: &SequenceSet, z: &WeightedAdjacency) -> Self {
        let size = seqs.vocab().size();
        let total = seqs.len() as f64;
        let mut frequency = vec![0.0; size];
        for s in seqs.iter() {
            for &k in s.steps() {
                frequency[k] += 1.0;
            }
        }
        frequency.iter_mut().for_each(|f| *f /= total);

        let mut count_optional = vec![0; size];
        let mut count_mandatory = vec![0; size];
        for s in seqs.iter() {
            let log_with = sequence_log_likelihood(s, z).unwrap_or(f64::NEG_INFINITY);
            for &k in s.interior() {
                let log_without =
                    sequence_log_likelihood(&s.without(k), z).unwrap_or(f64::NEG_INFINITY);
                if sequence_optionality(log_with, log_without, frequency[k]) > 0.5 {
                    count_optional[k] += 1;
                } else {
                    count_mandatory[k] += 1;
                }
            }
        }
        TrainingStats {
            frequency,
            count_optional,
            count_mandatory,
        }
    }
}

/// Per-sequence optionality of a key-step with frequency `fr`, from the log
/// likelihoods of the sequence with and without it. `0/0` maps to 0.
pub fn sequence_optionality(log_with: f64, log_without: f64, fr: f64) -> f64 {
    // a = log[P(y - K) (1 - fr)], b = log[P(y) fr]; result = e^a / (e^a + e^b)
    let a = log_without + (1.0 - fr).ln();
    let b = log_with + fr.ln();
    match (a == f64::NEG_INFINITY, b == f64::NEG_INFINITY) {
        (true, _) => 0.0,
        (false, true) => 1.0,
        (false, false) => 1.0 / (1.0 + (b - a).exp()),
    }
}

/// The current key-step (a labelled key-step or END) and the ordered
/// history preceding it (START implied, not listed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasonerQuery {
    current: usize,
    history: Vec<usize>,
    size: usize,
}

impl ReasonerQuery {
    pub fn new(current: usize, history: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        if current == vocab.start() || current > vocab.end() {
            return Err(TaskGraphError::InvalidInput(format!(
                "current key-step {current} must be a labelled key-step or END"
            )));
        }
        let mut seen = vec![false; vocab.size()];
        for &h in &history {
            if !vocab.is_interior(h) {
                return Err(TaskGraphError::InvalidInput(format!(
                    "history entry {h} is not a labelled key-step"
                )));
            }
            if h == current {
                return Err(TaskGraphError::ContractViolation(format!(
                    "current key-step {current} already appears in the history"
                )));
            }
            if std::mem::replace(&mut seen[h], true) {
                return Err(TaskGraphError::InvalidInput(format!(
                    "history repeats key-step {h}"
                )));
            }
        }
        Ok(ReasonerQuery {
            current,
            history,
            size: vocab.size(),
        })
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn history(&self) -> &[usize] {
        &self.history
    }

    pub fn observed(&self) -> ObservationState {
        ObservationState::from_indices(self.size, self.history.iter().copied())
            .expect("history validated against the vocabulary")
    }

    fn observed_with_current(&self) -> ObservationState {
        let mut state = self.observed();
        state.insert(self.current).expect("current validated");
        state
    }
}

/// Confidence that `prev` is a previous key-step of `i`: the share of
/// column `prev` held by row `i`.
pub fn previous_keystep_score(i: usize, prev: usize, z: &WeightedAdjacency) -> f64 {
    if i == prev {
        return 0.0;
    }
    let column: f64 = (0..z.size())
        .filter(|&h| h != prev)
        .map(|h| z.get(h, prev))
        .sum();
    if column > 0.0 {
        z.get(i, prev) / column
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionalityBreakdown {
    pub global: f64,
    pub local: f64,
    pub combined: f64,
    pub alpha: f64,
    /// The key-step never occurs in the training sequences; `global` is 0.
    pub unseen_in_training: bool,
}

/// Optionality of the query's current key-step.
pub fn optionality(
    query: &ReasonerQuery,
    model: &TrainedModel,
    alpha: f64,
) -> Result<OptionalityBreakdown> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TaskGraphError::InvalidInput(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let k = query.current;
    let votes = model.stats.count_optional[k] + model.stats.count_mandatory[k];
    let unseen_in_training = votes == 0;
    let global = if unseen_in_training {
        0.0
    } else {
        model.stats.count_optional[k] as f64 / votes as f64
    };

    let mut skipped = Vec::with_capacity(query.history.len() + 2);
    skipped.push(0);
    skipped.extend_from_slice(&query.history);
    skipped.push(model.vocab.end());
    let local = steps_log_likelihood(&skipped, &model.z_hat)
        .map(f64::exp)
        .unwrap_or(0.0);

    Ok(OptionalityBreakdown {
        global,
        local,
        combined: alpha * global + (1.0 - alpha) * local,
        alpha,
        unseen_in_training,
    })
}

/// Sum of previous-key-step scores of the current step over unobserved
/// candidates.
pub fn procedural_mistake_score(query: &ReasonerQuery, z: &WeightedAdjacency) -> f64 {
    let observed = query.observed();
    observed
        .unobserved()
        .filter(|&prev| prev != query.current)
        .map(|prev| previous_keystep_score(query.current, prev, z))
        .sum()
}

pub fn missing_keystep_score(
    query: &ReasonerQuery,
    m: usize,
    z: &WeightedAdjacency,
) -> Result<f64> {
    if m == query.current {
        return Err(TaskGraphError::ContractViolation(
            "a key-step cannot be missing for itself".into(),
        ));
    }
    Ok(if query.observed().contains(m) {
        0.0
    } else {
        previous_keystep_score(query.current, m, z)
    })
}

/// Probability of `f` coming next once the current key-step is observed.
pub fn future_keystep_prob(query: &ReasonerQuery, f: usize, z: &WeightedAdjacency) -> Result<f64> {
    let state = query.observed_with_current();
    if state.contains(f) {
        return Err(TaskGraphError::ContractViolation(format!(
            "future key-step {f} is already observed"
        )));
    }
    next_step_prob(f, &state, z)
}

/// Every weighted score for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedReport {
    pub previous: BTreeMap<usize, f64>,
    pub optionality: OptionalityBreakdown,
    pub mistake: f64,
    pub missing: BTreeMap<usize, f64>,
    pub future: BTreeMap<usize, f64>,
}

pub fn weighted_report(
    query: &ReasonerQuery,
    model: &TrainedModel,
    alpha: f64,
) -> Result<WeightedReport> {
    let z = &model.z_hat;
    let size = z.size();
    let others = || (0..size).filter(|&k| k != query.current);
    let previous = others()
        .map(|p| (p, previous_keystep_score(query.current, p, z)))
        .collect();
    let missing = others()
        .map(|m| missing_keystep_score(query, m, z).map(|s| (m, s)))
        .collect::<Result<_>>()?;
    let after = query.observed_with_current();
    let future = after
        .unobserved()
        .map(|f| future_keystep_prob(query, f, z).map(|p| (f, p)))
        .collect::<Result<_>>()?;
    Ok(WeightedReport {
        previous,
        optionality: optionality(query, model, alpha)?,
        mistake: procedural_mistake_score(query, z),
        missing,
        future,
    })
}

/// Scores derived from the post-processed binary graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub previous: BTreeMap<usize, f64>,
    pub mistake: f64,
    pub missing: BTreeMap<usize, f64>,
    pub future: BTreeMap<usize, f64>,
}

pub fn binary_scores(query: &ReasonerQuery, graph: &BinaryTaskGraph) -> BinaryScores {
    let current = query.current;
    let observed = query.observed();
    let pre: Vec<usize> = graph.predecessors(current).collect();

    let previous: BTreeMap<usize, f64> = pre.iter().map(|&p| (p, 1.0 / pre.len() as f64)).collect();
    let mistake = previous
        .iter()
        .filter(|(p, _)| !observed.contains(**p))
        .map(|(_, s)| s)
        .sum();

    let unmet: Vec<usize> = pre
        .iter()
        .copied()
        .filter(|&p| !observed.contains(p))
        .collect();
    let missing = unmet
        .iter()
        .map(|&m| (m, 1.0 / unmet.len() as f64))
        .collect();

    let succ: Vec<usize> = graph.successors(current).collect();
    let mut future: BTreeMap<usize, f64> = succ
        .iter()
        .map(|&f| {
            let blocking = graph
                .predecessors(f)
                .filter(|&p| p != current && !observed.contains(p))
                .count();
            (f, 1.0 / (succ.len() + blocking) as f64)
        })
        .collect();
    let total: f64 = future.values().sum();
    if total > 0.0 {
        future.values_mut().for_each(|v| *v /= total);
    }

    BinaryScores {
        previous,
        mistake,
        missing,
        future,
    }
}

/// Optionality needs edge weights; a binary graph cannot provide it.
pub fn binary_optionality(
    _query: &ReasonerQuery,
    _graph: &BinaryTaskGraph,
) -> Result<OptionalityBreakdown> {
    Err(TaskGraphError::Unsupported(
        "optionality is undefined for a binary task graph".into(),
    ))
}
