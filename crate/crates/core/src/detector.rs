//! Online mistake detection: a key-step is a mistake when one of its direct
//! pre-conditions in the binary graph has not been observed yet.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskGraphError};
use crate::eval::{harmonic_mean, ratio};
use crate::graph::BinaryTaskGraph;
use crate::likelihood::ObservationState;
use crate::vocab::KeyStepSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepLabel {
    Correct,
    Mistake,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MistakeVerdict {
    pub step: usize,
    pub label: StepLabel,
    /// Unmet direct pre-conditions, ascending.
    pub missing: Vec<usize>,
}

pub fn check_step(
    current: usize,
    observed: &ObservationState,
    graph: &BinaryTaskGraph,
) -> Result<MistakeVerdict> {
    let vocab = graph.vocab();
    if !vocab.is_interior(current) {
        return Err(TaskGraphError::ContractViolation(format!(
            "only labelled key-steps can be checked, got {current}"
        )));
    }
    let missing: Vec<usize> = graph
        .predecessors(current)
        .filter(|&p| !observed.contains(p))
        .collect();
    Ok(MistakeVerdict {
        step: current,
        label: if missing.is_empty() {
            StepLabel::Correct
        } else {
            StepLabel::Mistake
        },
        missing,
    })
}

/// Checks every interior step of a canonical sequence in order.
pub fn replay(seq: &KeyStepSequence, graph: &BinaryTaskGraph) -> Result<Vec<MistakeVerdict>> {
    replay_stream(seq.interior(), graph)
}

/// Checks a raw stream of key-steps (repetitions allowed). Every step joins
/// the observed set after being checked, whatever its verdict.
pub fn replay_stream(steps: &[usize], graph: &BinaryTaskGraph) -> Result<Vec<MistakeVerdict>> {
    let mut observed = ObservationState::new(graph.vocab().size());
    let mut verdicts = Vec::with_capacity(steps.len());
    for &step in steps {
        verdicts.push(check_step(step, &observed, graph)?);
        observed.insert(step)?;
    }
    Ok(verdicts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub rate: f64,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(TaskGraphError::InvalidInput(format!(
                "perturbation rate must lie in [0, 1], got {rate}"
            )));
        }
        Ok(PerturbationConfig { rate, seed })
    }
}

/// History and current step as seen by a noisy recognizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedPrefix {
    pub history: Vec<usize>,
    pub current: usize,
}

/// Perturbs one prediction: the current step is replaced with probability
/// `rate`; each earlier step independently undergoes a replace, delete or
/// insert (uniformly chosen) with probability `rate`. Random classes are
/// drawn uniformly from `1..=n`.
pub fn perturb_prefix<R: Rng>(
    history: &[usize],
    current: usize,
    n: usize,
    rate: f64,
    rng: &mut R,
) -> PerturbedPrefix {
    let mut noisy = Vec::with_capacity(history.len() + 2);
    for &step in history {
        if rate > 0.0 && rng.gen_bool(rate) {
            match rng.gen_range(0..3) {
                0 => noisy.push(rng.gen_range(1..=n)),
                1 => {}
                _ => {
                    noisy.push(step);
                    noisy.push(rng.gen_range(1..=n));
                }
            }
        } else {
            noisy.push(step);
        }
    }
    let current = if rate > 0.0 && rng.gen_bool(rate) {
        rng.gen_range(1..=n)
    } else {
        current
    };
    PerturbedPrefix {
        history: noisy,
        current,
    }
}

/// Perturbs a whole sequence, treating its last interior step as the current
/// one. Returns the raw interior stream (repetitions allowed).
pub fn perturb(seq: &KeyStepSequence, n: usize, cfg: &PerturbationConfig) -> Vec<usize> {
    let interior = seq.interior();
    let Some((&current, history)) = interior.split_last() else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = perturb_prefix(history, current, n, cfg.rate, &mut rng);
    let mut stream = p.history;
    stream.push(p.current);
    stream
}

/// Replays `steps` where every prediction sees an independently perturbed
/// copy of its history and current step.
pub fn perturbed_replay(
    steps: &[usize],
    graph: &BinaryTaskGraph,
    cfg: &PerturbationConfig,
) -> Result<Vec<MistakeVerdict>> {
    let n = graph.vocab().n();
    let size = graph.vocab().size();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut verdicts = Vec::with_capacity(steps.len());
    for t in 0..steps.len() {
        let p = perturb_prefix(&steps[..t], steps[t], n, cfg.rate, &mut rng);
        let observed = ObservationState::from_indices(size, p.history)?;
        verdicts.push(check_step(p.current, &observed, graph)?);
    }
    Ok(verdicts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub correct: ClassMetrics,
    pub mistake: ClassMetrics,
    pub average_f1: f64,
}

fn class_metrics(predicted: &[StepLabel], truth: &[StepLabel], class: StepLabel) -> ClassMetrics {
    let pairs = || predicted.iter().zip(truth);
    let tp = pairs()
        .filter(|(p, t)| **p == class && **t == class)
        .count();
    let pred_pos = predicted.iter().filter(|p| **p == class).count();
    let true_pos = truth.iter().filter(|t| **t == class).count();
    let precision = ratio(tp, pred_pos);
    let recall = ratio(tp, true_pos);
    ClassMetrics {
        precision,
        recall,
        f1: harmonic_mean(precision, recall),
    }
}

/// Per-class precision/recall/F1 with each class in turn as positive.
pub fn detection_metrics(
    verdicts: &[MistakeVerdict],
    truth: &[StepLabel],
) -> Result<DetectionMetrics> {
    let predicted: Vec<StepLabel> = verdicts.iter().map(|v| v.label).collect();
    label_metrics(&predicted, truth)
}

pub fn label_metrics(predicted: &[StepLabel], truth: &[StepLabel]) -> Result<DetectionMetrics> {
    if predicted.len() != truth.len() {
        return Err(TaskGraphError::ContractViolation(format!(
            "{} predictions against {} reference labels",
            predicted.len(),
            truth.len()
        )));
    }
    let correct = class_metrics(predicted, truth, StepLabel::Correct);
    let mistake = class_metrics(predicted, truth, StepLabel::Mistake);
    Ok(DetectionMetrics {
        correct,
        mistake,
        average_f1: (correct.f1 + mistake.f1) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::vocab::Vocabulary;

    /// S <- A <- B <- C <- E
    fn chain() -> BinaryTaskGraph {
        let vocab = Arc::new(Vocabulary::new(["A", "B", "C"]).unwrap());
        BinaryTaskGraph::new(vocab, [(1, 0), (2, 1), (3, 2), (4, 3)]).unwrap()
    }

    fn state(indices: &[usize]) -> ObservationState {
        ObservationState::from_indices(5, indices.iter().copied()).unwrap()
    }

    #[test]
    fn check_step_examples() {
        let g = chain();
        let v = check_step(2, &state(&[]), &g).unwrap();
        assert_eq!(v.label, StepLabel::Mistake);
        assert_eq!(v.missing, vec![1]);
        assert_eq!(
            check_step(2, &state(&[1]), &g).unwrap().label,
            StepLabel::Correct
        );
        assert!(check_step(0, &state(&[]), &g).is_err());
        assert!(check_step(4, &state(&[]), &g).is_err());
    }

    #[test]
    fn replay_examples() {
        let g = chain();
        let sorted = KeyStepSequence::from_interior(&[1, 2, 3], 3).unwrap();
        assert!(replay(&sorted, &g)
            .unwrap()
            .iter()
            .all(|v| v.label == StepLabel::Correct));

        // B and C swapped: C runs before B
        let swapped = KeyStepSequence::from_interior(&[1, 3, 2], 3).unwrap();
        let labels: Vec<StepLabel> = replay(&swapped, &g)
            .unwrap()
            .iter()
            .map(|v| v.label)
            .collect();
        assert_eq!(
            labels,
            vec![StepLabel::Correct, StepLabel::Mistake, StepLabel::Correct]
        );

        assert!(replay_stream(&[], &g).unwrap().is_empty());
    }

    #[test]
    fn perturb_zero_rate_is_identity() {
        let seq = KeyStepSequence::from_interior(&[1, 3, 2], 3).unwrap();
        let cfg = PerturbationConfig::new(0.0, 9).unwrap();
        assert_eq!(perturb(&seq, 3, &cfg), vec![1, 3, 2]);
        let g = chain();
        assert_eq!(
            perturbed_replay(seq.interior(), &g, &cfg).unwrap(),
            replay(&seq, &g).unwrap()
        );
    }

    #[test]
    fn perturb_single_class_alphabet() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = perturb_prefix(&[], 1, 1, 1.0, &mut rng);
        assert_eq!(p.current, 1);
        let p = perturb_prefix(&[1, 1, 1], 1, 1, 1.0, &mut rng);
        assert!(p.history.iter().all(|&s| s == 1));
    }

    #[test]
    fn perturb_is_seeded() {
        let seq = KeyStepSequence::from_interior(&[1, 2, 3], 3).unwrap();
        let cfg = PerturbationConfig::new(0.5, 4).unwrap();
        assert_eq!(perturb(&seq, 3, &cfg), perturb(&seq, 3, &cfg));
        assert!(PerturbationConfig::new(1.5, 0).is_err());
    }

    #[test]
    fn metrics_examples() {
        use StepLabel::*;
        let m = label_metrics(&[Correct, Correct], &[Correct, Correct]).unwrap();
        assert_eq!(m.correct.f1, 1.0);
        assert_eq!(m.mistake.f1, 0.0);
        assert_eq!(m.average_f1, 0.5);

        // mistake class: 2 TP, 1 FP, 1 FN
        let predicted = [Mistake, Mistake, Mistake, Correct, Correct];
        let truth = [Mistake, Mistake, Correct, Mistake, Correct];
        let m = label_metrics(&predicted, &truth).unwrap();
        assert!((m.mistake.f1 - 2.0 / 3.0).abs() < 1e-12);

        let m = label_metrics(&[Mistake, Correct], &[Mistake, Correct]).unwrap();
        assert_eq!(m.average_f1, 1.0);

        assert!(label_metrics(&[Mistake], &[]).is_err());
    }
}
