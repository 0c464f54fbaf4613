//! Trained model bundle and its JSON file format.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskGraphError};
use crate::graph::BinaryTaskGraph;
use crate::likelihood::WeightedAdjacency;
use crate::reasoner::TrainingStats;
use crate::trainer::TrainConfig;
use crate::vocab::{KeyStepSequence, Vocabulary};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub final_sequence_accuracy: f64,
    pub final_loss: f64,
    pub initial_loss: f64,
    /// Effective configuration, with beta resolved.
    pub config: TrainConfig,
}

/// `Ẑ` before post-processing, the post-processed graph, and the training
/// statistics the reasoner needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub vocab: Arc<Vocabulary>,
    pub z_hat: WeightedAdjacency,
    pub graph: BinaryTaskGraph,
    pub stats: TrainingStats,
    pub meta: TrainingMeta,
    pub sequences: Vec<KeyStepSequence>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    vocabulary: Vocabulary,
    z_hat: WeightedAdjacency,
    edges: Vec<[usize; 2]>,
    stats: TrainingStats,
    meta: TrainingMeta,
    sequences: Vec<Vec<usize>>,
}

impl TrainedModel {
    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            vocabulary: (*self.vocab).clone(),
            z_hat: self.z_hat.clone(),
            edges: self.graph.edges().iter().map(|&(i, j)| [i, j]).collect(),
            stats: self.stats.clone(),
            meta: self.meta.clone(),
            sequences: self.sequences.iter().map(|s| s.steps().to_vec()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(TaskGraphError::InvalidInput(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let vocab = Arc::new(file.vocabulary);
        let size = vocab.size();
        if file.z_hat.size() != size
            || file.stats.frequency.len() != size
            || file.stats.count_optional.len() != size
            || file.stats.count_mandatory.len() != size
        {
            return Err(TaskGraphError::InvalidInput(
                "model matrices do not match the vocabulary size".into(),
            ));
        }
        let graph =
            BinaryTaskGraph::new(vocab.clone(), file.edges.into_iter().map(|[i, j]| (i, j)))?;
        let sequences = file
            .sequences
            .into_iter()
            .map(|s| KeyStepSequence::new(s, vocab.n()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainedModel {
            vocab,
            z_hat: file.z_hat,
            graph,
            stats: file.stats,
            meta: file.meta,
            sequences,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TrainedModel::from_json_str(&fs::read_to_string(path)?)
    }
}
