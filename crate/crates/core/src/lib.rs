//! Task graph learning from key-step sequences.
//!
//! A task graph is a DAG over the key-steps of a procedure, framed by START
//! and END placeholders, whose edge `K_i -> K_j` states that `K_j` is a
//! pre-condition of `K_i`. This crate learns a weighted version of that graph
//! by maximizing the likelihood of observed sequences ([`likelihood`],
//! [`trainer`]), turns it into a binary DAG ([`postprocess`]) and uses the
//! result for procedure understanding ([`reasoner`]) and online mistake
//! detection ([`detector`]).

pub mod detector;
pub mod error;
pub mod eval;
pub mod graph;
pub mod likelihood;
pub mod matrix;
pub mod model;
pub mod postprocess;
pub mod reasoner;
pub mod synth;
pub mod trainer;
pub mod vocab;

pub use detector::{
    check_step, detection_metrics, perturb, perturbed_replay, replay, replay_stream,
    DetectionMetrics, MistakeVerdict, PerturbationConfig, StepLabel,
};
pub use error::{Result, TaskGraphError};
pub use eval::{edge_prf, EdgeMetrics};
pub use graph::{BinaryTaskGraph, Edge, ExportFormat};
pub use likelihood::{
    feasibility, next_step_prob, sequence_log_likelihood, tgml_gradient, tgml_loss,
    unweighted_next_prob, ObservationState, WeightedAdjacency,
};
pub use matrix::SquareMatrix;
pub use model::{TrainedModel, TrainingMeta};
pub use postprocess::{
    binarize, break_cycles, postprocess, postprocess_with, transitive_reduce, wire_orphans,
    PostprocessOptions,
};
pub use reasoner::{ReasonerQuery, TrainingStats};
pub use synth::{random_dag, sample_topological_sorts, GroundTruthDAG};
pub use trainer::{
    default_beta, masked_softmax, sequence_accuracy, train_do, ScoreMatrix, TrainConfig,
};
pub use vocab::{
    canonicalize_keep_first, expand_nonrepetitive, load_dataset, KeyStepSequence, RawSequence,
    SequenceSet, Vocabulary,
};
