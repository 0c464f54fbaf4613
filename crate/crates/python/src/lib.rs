//! Python bindings for the `taskgraph` crate.

use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyNotImplementedError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyList;

use taskgraph::detector::{perturbed_replay, replay_stream, PerturbationConfig};
use taskgraph::reasoner::{binary_scores, weighted_report, DEFAULT_ALPHA};
use taskgraph::synth::{random_dag, sample_topological_sorts};
use taskgraph::vocab::parse_dataset;
use taskgraph::{
    edge_prf, postprocess_with, sequence_log_likelihood, train_do, BinaryTaskGraph, ExportFormat,
    KeyStepSequence, PostprocessOptions, ReasonerQuery, SquareMatrix, TaskGraphError,
    WeightedAdjacency,
};

fn to_py_err(err: TaskGraphError) -> PyErr {
    match err {
        TaskGraphError::Io(e) => PyIOError::new_err(e.to_string()),
        TaskGraphError::Unsupported(m) => PyNotImplementedError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn indices(vocab: &taskgraph::Vocabulary, labels: &[String]) -> PyResult<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            vocab
                .index_of(l)
                .ok_or_else(|| PyValueError::new_err(format!("unknown key-step label {l:?}")))
        })
        .collect()
}

/// Key-step sequences over a fixed taxonomy.
#[pyclass(name = "SequenceSet", frozen, module = "taskgraph_py")]
struct PySequenceSet {
    inner: taskgraph::SequenceSet,
}

#[pymethods]
impl PySequenceSet {
    /// Builds a set from label lists. Repeated labels keep their first
    /// occurrence.
    #[new]
    fn new(taxonomy: Vec<String>, sequences: Vec<Vec<String>>) -> PyResult<Self> {
        let records: Vec<serde_json::Value> = sequences
            .iter()
            .enumerate()
            .map(|(k, s)| serde_json::json!({"id": format!("seq-{k}"), "steps": s}))
            .collect();
        let doc =
            serde_json::json!({"procedure": "python", "taxonomy": taxonomy, "sequences": records});
        let dataset = parse_dataset(&doc.to_string()).map_err(to_py_err)?;
        Ok(PySequenceSet { inner: dataset.set })
    }

    /// Loads a dataset file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let dataset = taskgraph::load_dataset(path).map_err(to_py_err)?;
        Ok(PySequenceSet { inner: dataset.set })
    }

    #[getter]
    fn taxonomy(&self) -> Vec<String> {
        self.inner.vocab().names().to_vec()
    }

    /// Sequences as index lists, START and END included.
    #[getter]
    fn sequences(&self) -> Vec<Vec<usize>> {
        self.inner.iter().map(|s| s.steps().to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Binary task graph; edge `(i, j)` means node `j` is a pre-condition of `i`.
#[pyclass(name = "TaskGraph", frozen, module = "taskgraph_py")]
struct PyTaskGraph {
    inner: BinaryTaskGraph,
}

#[pymethods]
impl PyTaskGraph {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyTaskGraph {
            inner: BinaryTaskGraph::from_json_str(text).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn nodes(&self) -> Vec<String> {
        self.inner.vocab().node_labels()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().iter().copied().collect()
    }

    fn predecessors(&self, node: usize) -> Vec<usize> {
        self.inner.predecessors(node).collect()
    }

    fn to_json(&self) -> String {
        self.inner.export(ExportFormat::Json)
    }

    fn to_dot(&self) -> String {
        self.inner.export(ExportFormat::Dot)
    }

    fn __eq__(&self, other: &PyTaskGraph) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "TaskGraph(nodes={}, edges={})",
            self.inner.vocab().size(),
            self.inner.edges().len()
        )
    }
}

/// A trained model: weighted matrix, post-processed graph and statistics.
#[pyclass(name = "TrainedModel", frozen, module = "taskgraph_py")]
struct PyTrainedModel {
    inner: taskgraph::TrainedModel,
}

#[pymethods]
impl PyTrainedModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyTrainedModel {
            inner: taskgraph::TrainedModel::load(path).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyTrainedModel {
            inner: taskgraph::TrainedModel::from_json_str(text).map_err(to_py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.inner.to_json_string())
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn taxonomy(&self) -> Vec<String> {
        self.inner.vocab.names().to_vec()
    }

    #[getter]
    fn z_hat(&self) -> Vec<Vec<f64>> {
        self.inner.z_hat.to_rows()
    }

    #[getter]
    fn graph(&self) -> PyTaskGraph {
        PyTaskGraph {
            inner: self.inner.graph.clone(),
        }
    }

    #[getter]
    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.meta)
    }

    /// Log-likelihood of a label sequence (START/END implied) under `z_hat`.
    fn log_likelihood(&self, steps: Vec<String>) -> PyResult<f64> {
        let interior = indices(&self.inner.vocab, &steps)?;
        let seq =
            KeyStepSequence::from_interior(&interior, self.inner.vocab.n()).map_err(to_py_err)?;
        sequence_log_likelihood(&seq, &self.inner.z_hat).map_err(to_py_err)
    }

    /// Scores for the current key-step given the ordered observed history.
    #[pyo3(signature = (current, observed = Vec::new(), mode = "weighted", alpha = DEFAULT_ALPHA))]
    fn reason<'py>(
        &self,
        py: Python<'py>,
        current: String,
        observed: Vec<String>,
        mode: &str,
        alpha: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let vocab = &self.inner.vocab;
        let current = indices(vocab, &[current])?[0];
        let history = indices(vocab, &observed)?;
        let query = ReasonerQuery::new(current, history, vocab).map_err(to_py_err)?;
        match mode {
            "weighted" => json_to_py(
                py,
                &weighted_report(&query, &self.inner, alpha).map_err(to_py_err)?,
            ),
            "binary" => json_to_py(py, &binary_scores(&query, &self.inner.graph)),
            other => Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        }
    }

    /// Online mistake detection over a label stream. Returns one verdict
    /// dict per step.
    #[pyo3(signature = (steps, perturb_rate = 0.0, seed = 0, prune_start_pair = false))]
    fn detect<'py>(
        &self,
        py: Python<'py>,
        steps: Vec<String>,
        perturb_rate: f64,
        seed: u64,
        prune_start_pair: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let stream = indices(&self.inner.vocab, &steps)?;
        let graph = if prune_start_pair {
            postprocess_with(
                &self.inner.z_hat,
                self.inner.vocab.clone(),
                PostprocessOptions {
                    prune_start_pair: true,
                },
            )
            .map_err(to_py_err)?
        } else {
            self.inner.graph.clone()
        };
        let verdicts = if perturb_rate > 0.0 {
            let cfg = PerturbationConfig::new(perturb_rate, seed).map_err(to_py_err)?;
            perturbed_replay(&stream, &graph, &cfg)
        } else {
            replay_stream(&stream, &graph)
        }
        .map_err(to_py_err)?;
        json_to_py(py, &verdicts)
    }
}

/// Trains a model with direct optimization. Keyword arguments override
/// training defaults (`learning_rate`, `max_epochs`, `beta`,
/// `sa_stop_threshold`, `sa_patience`, `seed`, `init_scale`).
#[pyfunction]
#[pyo3(signature = (sequences, **config))]
fn train(
    sequences: &PySequenceSet,
    config: Option<&Bound<'_, pyo3::types::PyDict>>,
) -> PyResult<PyTrainedModel> {
    let config = match config {
        Some(kwargs) => {
            let text: String = kwargs
                .py()
                .import("json")?
                .call_method1("dumps", (kwargs,))?
                .extract()?;
            taskgraph::TrainConfig::from_json_str(&text).map_err(to_py_err)?
        }
        None => taskgraph::TrainConfig::default(),
    };
    Ok(PyTrainedModel {
        inner: train_do(&sequences.inner, &config).map_err(to_py_err)?,
    })
}

/// Turns a weighted adjacency matrix (rows over START, key-steps, END) into a
/// binary task graph.
#[pyfunction]
#[pyo3(signature = (z, taxonomy, prune_start_pair = false))]
fn postprocess(
    z: Vec<Vec<f64>>,
    taxonomy: Vec<String>,
    prune_start_pair: bool,
) -> PyResult<PyTaskGraph> {
    let vocab = Arc::new(taskgraph::Vocabulary::new(taxonomy).map_err(to_py_err)?);
    let z = WeightedAdjacency::unnormalized(SquareMatrix::from_rows(z).map_err(to_py_err)?)
        .map_err(to_py_err)?;
    Ok(PyTaskGraph {
        inner: postprocess_with(&z, vocab, PostprocessOptions { prune_start_pair })
            .map_err(to_py_err)?,
    })
}

/// Edge precision, recall and F1 of `pred` against `truth`.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    pred: &PyTaskGraph,
    truth: &PyTaskGraph,
) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &edge_prf(&pred.inner, &truth.inner).map_err(to_py_err)?)
}

/// Random ground-truth graph and `count` sequences sampled from it, as
/// `(graph, taxonomy, label_sequences)`.
#[pyfunction]
#[pyo3(signature = (nodes, density, count, seed = 0))]
fn synth<'py>(
    py: Python<'py>,
    nodes: usize,
    density: f64,
    count: usize,
    seed: u64,
) -> PyResult<(PyTaskGraph, Vec<String>, Bound<'py, PyList>)> {
    let dag = random_dag(nodes, density, seed).map_err(to_py_err)?;
    let seqs = sample_topological_sorts(&dag.graph, count, seed).map_err(to_py_err)?;
    let vocab = dag.vocab().clone();
    let labels: Vec<Vec<String>> = seqs
        .iter()
        .map(|s| {
            s.interior()
                .iter()
                .map(|&i| vocab.label(i).to_string())
                .collect()
        })
        .collect();
    Ok((
        PyTaskGraph { inner: dag.graph },
        vocab.names().to_vec(),
        PyList::new(py, labels)?,
    ))
}

#[pymodule]
fn taskgraph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequenceSet>()?;
    m.add_class::<PyTaskGraph>()?;
    m.add_class::<PyTrainedModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(postprocess, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    Ok(())
}
