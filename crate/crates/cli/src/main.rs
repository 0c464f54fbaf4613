mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use taskgraph::detector::{
    label_metrics, perturbed_replay, replay_stream, MistakeVerdict, PerturbationConfig, StepLabel,
};
use taskgraph::reasoner::{binary_scores, weighted_report, DEFAULT_ALPHA};
use taskgraph::synth::{random_dag, sample_topological_sorts};
use taskgraph::vocab::{dataset_json, load_dataset, DatasetRecord};
use taskgraph::{
    edge_prf, postprocess_with, train_do, BinaryTaskGraph, EdgeMetrics, ExportFormat,
    PostprocessOptions, ReasonerQuery, TaskGraphError, TrainConfig, TrainedModel, Vocabulary,
};

use manifest::{write_atomic, RunManifest};

const SEED_ENV: &str = "TGML_SEED";

#[derive(Parser)]
#[command(
    name = "tgml",
    version,
    about = "Learn task graphs from key-step sequences and use them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a dataset file.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// JSON training config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edge precision/recall/F1 against reference graphs. Repeat the
    /// flags to average over several procedures.
    Evaluate {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long, required = true)]
        truth: Vec<PathBuf>,
    },
    /// Score a query: current key-step plus the ordered observed history.
    Reason {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        current: String,
        /// Comma-separated labels in the order they were observed.
        #[arg(long, default_value = "")]
        observed: String,
        #[arg(long, value_enum, default_value_t = Mode::Weighted)]
        mode: Mode,
    },
    /// Replay sequences through the online mistake detector.
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// Dataset file whose records are replayed as recorded.
        #[arg(long)]
        sequences: PathBuf,
        /// JSON object mapping record id to per-step "correct"/"mistake".
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        perturb_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        prune_start_pair: bool,
    },
    /// Generate a random task graph and sequences sampled from it.
    Synth {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        density: f64,
        #[arg(long)]
        sequences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for dataset.json, truth.json and manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the model's task graph.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Weighted,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Dot,
}

/// A validation or runtime failure, reported as one JSON line.
#[derive(Debug)]
pub struct Failure {
    kind: &'static str,
    message: String,
    line: Option<usize>,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Failure {
            kind,
            message: message.into(),
            line: None,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Failure::new("io", format!("{}: {err}", path.display()))
    }

    fn to_json(&self) -> Value {
        let mut doc = json!({"error": self.kind, "message": self.message});
        if let Some(line) = self.line {
            doc["line"] = json!(line);
        }
        doc
    }
}

impl From<TaskGraphError> for Failure {
    fn from(err: TaskGraphError) -> Self {
        let line = match &err {
            TaskGraphError::Parse { line, .. } => Some(*line),
            _ => None,
        };
        Failure {
            kind: err.kind(),
            message: err.to_string(),
            line,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            dataset,
            config,
            out,
        } => cmd_train(&dataset, config.as_deref(), &out),
        Command::Evaluate { model, truth } => cmd_evaluate(&model, &truth),
        Command::Reason {
            model,
            current,
            observed,
            mode,
        } => cmd_reason(&model, &current, &observed, mode),
        Command::Detect {
            model,
            sequences,
            labels,
            perturb_rate,
            seed,
            prune_start_pair,
        } => cmd_detect(
            &model,
            &sequences,
            labels.as_deref(),
            perturb_rate,
            seed,
            prune_start_pair,
        ),
        Command::Synth {
            nodes,
            density,
            sequences,
            seed,
            out,
        } => cmd_synth(nodes, density, sequences, seed, &out),
        Command::Export { model, format } => cmd_export(&model, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.to_json());
            ExitCode::from(1)
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn load_model(path: &Path) -> Result<TrainedModel, Failure> {
    Ok(TrainedModel::from_json_str(&read_text(path)?)?)
}

/// Writes to stdout. A closed pipe (e.g. `| head`) ends the process quietly.
fn emit(text: &str) {
    let mut out = io::stdout().lock();
    if let Err(err) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if err.kind() == io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("{}", Failure::new("io", format!("stdout: {err}")).to_json());
        std::process::exit(1);
    }
}

fn print_json(doc: &impl serde::Serialize) {
    emit(&(serde_json::to_string(doc).expect("document serializes") + "\n"));
}

fn seed_override() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(value) => value.trim().parse().map(Some).map_err(|_| {
            Failure::new(
                "invalid-input",
                format!("{SEED_ENV}={value:?} is not an unsigned integer"),
            )
        }),
        Err(_) => Ok(None),
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_train(dataset_path: &Path, config_path: Option<&Path>, out: &Path) -> CmdResult {
    let started = Instant::now();
    let mut manifest = RunManifest::new("train");
    let dataset = load_dataset(dataset_path).map_err(|e| match e {
        TaskGraphError::Io(io) => Failure::io(dataset_path, io),
        other => other.into(),
    })?;
    manifest.add_input(dataset_path)?;
    let mut config = match config_path {
        Some(path) => {
            let cfg = TrainConfig::from_json_str(&read_text(path)?)?;
            manifest.add_input(path)?;
            cfg
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed_override()? {
        config.seed = seed;
    }

    let model = train_do(&dataset.set, &config)?;
    write_atomic(out, model.to_json_string().as_bytes())?;

    manifest.config = Some(model.meta.config.clone());
    manifest.seed = Some(model.meta.config.seed);
    manifest.outputs.push(out.display().to_string());
    manifest
        .metrics
        .insert("final_loss".into(), model.meta.final_loss);
    manifest.metrics.insert(
        "final_sequence_accuracy".into(),
        model.meta.final_sequence_accuracy,
    );
    manifest
        .metrics
        .insert("epochs_run".into(), model.meta.epochs_run as f64);
    manifest
        .metrics
        .insert("best_epoch".into(), model.meta.best_epoch as f64);
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    let doc = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path(out), doc.as_bytes())?;
    print_json(&manifest);
    Ok(())
}

fn cmd_evaluate(models: &[PathBuf], truths: &[PathBuf]) -> CmdResult {
    if models.len() != truths.len() {
        return Err(Failure::new(
            "invalid-input",
            format!(
                "{} --model flags but {} --truth flags",
                models.len(),
                truths.len()
            ),
        ));
    }
    let mut all = Vec::with_capacity(models.len());
    for (model, truth) in models.iter().zip(truths) {
        let model = load_model(model)?;
        let truth = BinaryTaskGraph::from_json_str(&read_text(truth)?)?;
        all.push(edge_prf(&model.graph, &truth)?);
    }
    print_json(&EdgeMetrics::average(&all).expect("at least one pair"));
    Ok(())
}

fn label_index(vocab: &Vocabulary, label: &str) -> Result<usize, Failure> {
    vocab
        .index_of(label)
        .ok_or_else(|| Failure::new("invalid-input", format!("unknown key-step label {label:?}")))
}

fn by_label(vocab: &Vocabulary, scores: &BTreeMap<usize, f64>) -> BTreeMap<String, f64> {
    scores
        .iter()
        .map(|(&k, &v)| (vocab.label(k).to_string(), v))
        .collect()
}

fn cmd_reason(model_path: &Path, current: &str, observed: &str, mode: Mode) -> CmdResult {
    let model = load_model(model_path)?;
    let vocab = &model.vocab;
    let current = label_index(vocab, current)?;
    let history = observed
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|label| label_index(vocab, label))
        .collect::<Result<Vec<_>, _>>()?;
    let query = ReasonerQuery::new(current, history, vocab)?;
    let doc = match mode {
        Mode::Weighted => {
            let r = weighted_report(&query, &model, DEFAULT_ALPHA)?;
            json!({
                "mode": "weighted",
                "current": vocab.label(current),
                "previous": by_label(vocab, &r.previous),
                "optionality": r.optionality,
                "mistake": r.mistake,
                "missing": by_label(vocab, &r.missing),
                "future": by_label(vocab, &r.future),
            })
        }
        Mode::Binary => {
            let s = binary_scores(&query, &model.graph);
            json!({
                "mode": "binary",
                "current": vocab.label(current),
                "previous": by_label(vocab, &s.previous),
                "mistake": s.mistake,
                "missing": by_label(vocab, &s.missing),
                "future": by_label(vocab, &s.future),
            })
        }
    };
    print_json(&doc);
    Ok(())
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, Vec<StepLabel>>, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| TaskGraphError::from(e).into())
}

fn verdict_json(vocab: &Vocabulary, id: &str, position: usize, v: &MistakeVerdict) -> Value {
    json!({
        "sequence": id,
        "position": position,
        "step": vocab.label(v.step),
        "label": v.label,
        "missing": v.missing.iter().map(|&m| vocab.label(m)).collect::<Vec<_>>(),
    })
}

fn cmd_detect(
    model_path: &Path,
    sequences: &Path,
    labels: Option<&Path>,
    rate: f64,
    seed: u64,
    prune_start_pair: bool,
) -> CmdResult {
    let model = load_model(model_path)?;
    let dataset = load_dataset(sequences).map_err(|e| match e {
        TaskGraphError::Io(io) => Failure::io(sequences, io),
        other => other.into(),
    })?;
    if dataset.vocab().names() != model.vocab.names() {
        return Err(Failure::new(
            "contract-violation",
            "sequence taxonomy differs from the model vocabulary",
        ));
    }
    let graph = if prune_start_pair {
        postprocess_with(
            &model.z_hat,
            model.vocab.clone(),
            PostprocessOptions {
                prune_start_pair: true,
            },
        )?
    } else {
        model.graph.clone()
    };
    let reference = labels.map(read_labels).transpose()?;
    PerturbationConfig::new(rate, seed)?;

    let vocab: Arc<Vocabulary> = model.vocab.clone();
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    let mut lines = Vec::new();
    for (k, raw) in dataset.raw.iter().enumerate() {
        let cfg = PerturbationConfig::new(rate, seed.wrapping_add(k as u64))?;
        let verdicts = perturbed_replay(&raw.steps, &graph, &cfg)?;
        let expected: Vec<StepLabel> = match &reference {
            Some(map) => {
                let labels = map.get(&raw.source_id).ok_or_else(|| {
                    Failure::new(
                        "invalid-input",
                        format!("no labels for sequence {:?}", raw.source_id),
                    )
                })?;
                if labels.len() != raw.steps.len() {
                    return Err(Failure::new(
                        "invalid-input",
                        format!(
                            "sequence {:?} has {} steps but {} labels",
                            raw.source_id,
                            raw.steps.len(),
                            labels.len()
                        ),
                    ));
                }
                labels.clone()
            }
            None => replay_stream(&raw.steps, &graph)?
                .iter()
                .map(|v| v.label)
                .collect(),
        };
        for (t, v) in verdicts.iter().enumerate() {
            lines.push(verdict_json(&vocab, &raw.source_id, t, v));
        }
        predicted.extend(verdicts.iter().map(|v| v.label));
        truth.extend(expected);
    }
    let metrics = label_metrics(&predicted, &truth)?;
    for line in &lines {
        print_json(line);
    }
    print_json(&json!({
        "metrics": metrics,
        "perturb_rate": rate,
        "seed": seed,
        "steps": predicted.len(),
        "reference": if reference.is_some() { "labels" } else { "unperturbed-replay" },
    }));
    Ok(())
}

fn cmd_synth(nodes: usize, density: f64, count: usize, seed: u64, out: &Path) -> CmdResult {
    let started = Instant::now();
    if nodes < 2 {
        return Err(Failure::new("invalid-input", "--nodes must be at least 2"));
    }
    if count == 0 {
        return Err(Failure::new(
            "invalid-input",
            "--sequences must be at least 1",
        ));
    }
    let dag = random_dag(nodes, density, seed)?;
    let seqs = sample_topological_sorts(&dag.graph, count, seed)?;
    let vocab = dag.vocab();
    let records: Vec<DatasetRecord> = seqs
        .iter()
        .enumerate()
        .map(|(k, s)| DatasetRecord {
            id: format!("seq-{k:04}"),
            steps: s
                .interior()
                .iter()
                .map(|&i| vocab.label(i).to_string())
                .collect(),
        })
        .collect();
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let dataset_path = out.join("dataset.json");
    let truth_path = out.join("truth.json");
    let dataset = dataset_json(&format!("synthetic-{seed}"), vocab, &records);
    write_atomic(
        &dataset_path,
        serde_json::to_string_pretty(&dataset)
            .expect("dataset serializes")
            .as_bytes(),
    )?;
    write_atomic(&truth_path, dag.graph.to_json_string().as_bytes())?;

    let mut manifest = RunManifest::new("synth");
    manifest.seed = Some(seed);
    manifest.outputs = vec![
        dataset_path.display().to_string(),
        truth_path.display().to_string(),
    ];
    manifest.metrics.insert("nodes".into(), nodes as f64);
    manifest.metrics.insert("density".into(), density);
    manifest.metrics.insert("sequences".into(), count as f64);
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    let doc = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out.join("manifest.json"), doc.as_bytes())?;
    print_json(&manifest);
    Ok(())
}

fn cmd_export(model_path: &Path, format: Format) -> CmdResult {
    let model = load_model(model_path)?;
    let format = match format {
        Format::Json => ExportFormat::Json,
        Format::Dot => ExportFormat::Dot,
    };
    let mut doc = model.graph.export(format);
    if !doc.ends_with('\n') {
        doc.push('\n');
    }
    emit(&doc);
    Ok(())
}
