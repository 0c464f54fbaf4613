//! Key-step vocabulary and conversion of raw demonstrations into canonical,
//! repetition-free training sequences.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskGraphError};

pub const START_LABEL: &str = "START";
pub const END_LABEL: &str = "END";

/// Default bound on the number of occurrence combinations explored per raw
/// sequence by [`expand_nonrepetitive`].
pub const DEFAULT_EXPAND_CAP: usize = 64;

/// Ordered set of key-step labels. Index 0 is START, indices `1..=n` are the
/// labelled key-steps and index `n + 1` is END.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    names: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(TaskGraphError::InvalidInput(
                "vocabulary needs at least one key-step".into(),
            ));
        }
        let mut lookup = HashMap::with_capacity(names.len());
        for (pos, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(TaskGraphError::InvalidInput(format!(
                    "key-step label at position {pos} is empty"
                )));
            }
            if lookup.insert(name.clone(), pos + 1).is_some() {
                return Err(TaskGraphError::InvalidInput(format!(
                    "duplicate key-step label {name:?}"
                )));
            }
        }
        Ok(Vocabulary { names, lookup })
    }

    /// Vocabulary with labels `K1..Kn`.
    pub fn numbered(n: usize) -> Result<Self> {
        Vocabulary::new((1..=n).map(|i| format!("K{i}")))
    }

    /// Number of labelled key-steps (excludes START and END).
    pub fn n(&self) -> usize {
        self.names.len()
    }

    /// Matrix dimension `n + 2`.
    pub fn size(&self) -> usize {
        self.names.len() + 2
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn end(&self) -> usize {
        self.names.len() + 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_interior(&self, index: usize) -> bool {
        index >= 1 && index <= self.n()
    }

    pub fn label(&self, index: usize) -> &str {
        if index == 0 {
            START_LABEL
        } else if index == self.end() {
            END_LABEL
        } else {
            &self.names[index - 1]
        }
    }

    /// Index of a taxonomy label. START/END resolve only when no taxonomy
    /// entry shadows them.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.lookup.get(label).copied().or(match label {
            START_LABEL => Some(0),
            END_LABEL => Some(self.end()),
            _ => None,
        })
    }

    /// All node labels including START and END, in index order.
    pub fn node_labels(&self) -> Vec<String> {
        (0..self.size())
            .map(|i| self.label(i).to_string())
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = TaskGraphError;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Vocabulary::new(names)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(vocab: Vocabulary) -> Self {
        vocab.names
    }
}

/// A demonstration as recorded, possibly with repeated key-steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSequence {
    pub source_id: String,
    pub steps: Vec<usize>,
}

impl RawSequence {
    pub fn new(
        source_id: impl Into<String>,
        steps: Vec<usize>,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let source_id = source_id.into();
        if steps.is_empty() {
            return Err(TaskGraphError::InvalidInput(format!(
                "raw sequence {source_id:?} is empty"
            )));
        }
        if let Some(bad) = steps.iter().find(|&&s| !vocab.is_interior(s)) {
            return Err(TaskGraphError::InvalidInput(format!(
                "raw sequence {source_id:?} references key-step index {bad} outside 1..={}",
                vocab.n()
            )));
        }
        Ok(RawSequence { source_id, steps })
    }
}

/// A START-prefixed, END-suffixed, repetition-free index sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct KeyStepSequence {
    steps: Vec<usize>,
}

impl KeyStepSequence {
    /// Validates a full sequence (START and END included) over `n` key-steps.
    pub fn new(steps: Vec<usize>, n: usize) -> Result<Self> {
        let end = n + 1;
        if steps.len() < 2 || steps[0] != 0 || *steps.last().unwrap() != end {
            return Err(TaskGraphError::InvalidInput(format!(
                "sequence {steps:?} must start with 0 (START) and finish with {end} (END)"
            )));
        }
        let mut seen = vec![false; n + 2];
        for &s in &steps {
            if s > end {
                return Err(TaskGraphError::InvalidInput(format!(
                    "index {s} outside vocabulary of size {}",
                    n + 2
                )));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(TaskGraphError::InvalidInput(format!(
                    "index {s} repeated in {steps:?}"
                )));
            }
        }
        Ok(KeyStepSequence { steps })
    }

    /// Wraps repetition-free interior indices with START and END.
    pub fn from_interior(interior: &[usize], n: usize) -> Result<Self> {
        let mut steps = Vec::with_capacity(interior.len() + 2);
        steps.push(0);
        steps.extend_from_slice(interior);
        steps.push(n + 1);
        KeyStepSequence::new(steps, n)
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn interior(&self) -> &[usize] {
        &self.steps[1..self.steps.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.steps.contains(&index)
    }

    /// Copy of the sequence with one interior key-step deleted.
    pub fn without(&self, index: usize) -> KeyStepSequence {
        KeyStepSequence {
            steps: self.steps.iter().copied().filter(|&s| s != index).collect(),
        }
    }
}

/// Non-empty collection of canonical sequences over one vocabulary.
#[derive(Debug, Clone)]
pub struct SequenceSet {
    vocab: Arc<Vocabulary>,
    sequences: Vec<KeyStepSequence>,
}

impl SequenceSet {
    pub fn new(vocab: Arc<Vocabulary>, sequences: Vec<KeyStepSequence>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(TaskGraphError::InvalidInput("sequence set is empty".into()));
        }
        let end = vocab.end();
        if let Some(bad) = sequences.iter().find(|s| *s.steps.last().unwrap() != end) {
            return Err(TaskGraphError::InvalidInput(format!(
                "sequence {:?} does not belong to a vocabulary of {} key-steps",
                bad.steps,
                vocab.n()
            )));
        }
        Ok(SequenceSet { vocab, sequences })
    }

    /// Builds a set from interior index lists.
    pub fn from_interiors(vocab: Arc<Vocabulary>, interiors: &[Vec<usize>]) -> Result<Self> {
        let n = vocab.n();
        let sequences = interiors
            .iter()
            .map(|s| KeyStepSequence::from_interior(s, n))
            .collect::<Result<Vec<_>>>()?;
        SequenceSet::new(vocab, sequences)
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn sequences(&self) -> &[KeyStepSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &KeyStepSequence> {
        self.sequences.iter()
    }
}

/// Keeps the first occurrence of every key-step, preserving order.
pub fn canonicalize_keep_first(raw: &RawSequence, n: usize) -> Result<KeyStepSequence> {
    if raw.steps.is_empty() {
        return Err(TaskGraphError::InvalidInput(format!(
            "raw sequence {:?} is empty",
            raw.source_id
        )));
    }
    let mut seen = BTreeSet::new();
    let interior: Vec<usize> = raw
        .steps
        .iter()
        .copied()
        .filter(|s| seen.insert(*s))
        .collect();
    KeyStepSequence::from_interior(&interior, n)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub sequences: Vec<KeyStepSequence>,
    /// Set when the number of occurrence combinations exceeded the cap.
    pub truncated: bool,
}

/// Generates the repetition-free sequences obtained by keeping exactly one
/// occurrence of every repeated key-step.
///
/// Key-steps are ordered by first appearance and each gets an occurrence
/// choice; choice vectors are visited in lexicographic order, so the first
/// combination is always the keep-first sequence. Only the first `cap`
/// combinations are visited.
pub fn expand_nonrepetitive(raw: &RawSequence, n: usize, cap: usize) -> Result<Expansion> {
    if raw.steps.is_empty() {
        return Err(TaskGraphError::InvalidInput(format!(
            "raw sequence {:?} is empty",
            raw.source_id
        )));
    }
    if cap == 0 {
        return Err(TaskGraphError::InvalidInput(
            "expand cap must be positive".into(),
        ));
    }

    // occurrence positions per key-step, keyed in order of first appearance
    let mut order: Vec<usize> = Vec::new();
    let mut positions: HashMap<usize, Vec<usize>> = HashMap::new();
    for (pos, &step) in raw.steps.iter().enumerate() {
        positions
            .entry(step)
            .or_insert_with(|| {
                order.push(step);
                Vec::new()
            })
            .push(pos);
    }
    let radices: Vec<usize> = order.iter().map(|s| positions[s].len()).collect();
    let total = radices
        .iter()
        .try_fold(1usize, |acc, &r| acc.checked_mul(r))
        .unwrap_or(usize::MAX);

    let mut choice = vec![0usize; order.len()];
    let mut seen = BTreeSet::new();
    let mut sequences = Vec::new();
    let mut keep = vec![false; raw.steps.len()];
    for _ in 0..total.min(cap) {
        keep.iter_mut().for_each(|k| *k = false);
        for (slot, step) in order.iter().enumerate() {
            keep[positions[step][choice[slot]]] = true;
        }
        let interior: Vec<usize> = raw
            .steps
            .iter()
            .zip(&keep)
            .filter_map(|(&s, &k)| k.then_some(s))
            .collect();
        if seen.insert(interior.clone()) {
            sequences.push(KeyStepSequence::from_interior(&interior, n)?);
        }
        // odometer increment, last slot fastest
        for slot in (0..choice.len()).rev() {
            choice[slot] += 1;
            if choice[slot] < radices[slot] {
                break;
            }
            choice[slot] = 0;
        }
    }
    Ok(Expansion {
        sequences,
        truncated: total > cap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RepetitionStrategy {
    #[default]
    KeepFirst,
    Expand,
}

#[derive(Debug, Deserialize)]
struct DatasetFile {
    procedure: String,
    taxonomy: Vec<String>,
    sequences: Vec<DatasetRecord>,
    #[serde(default)]
    strategy: RepetitionStrategy,
    #[serde(default)]
    expand_cap: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub steps: Vec<String>,
}

/// A parsed dataset: the canonical training set plus the raw records it was
/// derived from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub procedure: String,
    pub strategy: RepetitionStrategy,
    pub raw: Vec<RawSequence>,
    pub set: SequenceSet,
    /// Ids of records whose expansion hit the cap.
    pub truncated: Vec<String>,
}

impl Dataset {
    pub fn vocab(&self) -> &Arc<Vocabulary> {
        self.set.vocab()
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let file: DatasetFile = serde_json::from_str(text)?;
    let vocab = Arc::new(Vocabulary::new(file.taxonomy)?);
    let n = vocab.n();
    let cap = file.expand_cap.unwrap_or(DEFAULT_EXPAND_CAP);

    let mut raw = Vec::with_capacity(file.sequences.len());
    for record in &file.sequences {
        let steps = record
            .steps
            .iter()
            .map(|label| {
                vocab
                    .index_of(label)
                    .filter(|&i| vocab.is_interior(i))
                    .ok_or_else(|| TaskGraphError::UnknownLabel {
                        label: label.clone(),
                        record: record.id.clone(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        raw.push(RawSequence::new(record.id.clone(), steps, &vocab)?);
    }

    let mut sequences = Vec::new();
    let mut truncated = Vec::new();
    for r in &raw {
        match file.strategy {
            RepetitionStrategy::KeepFirst => sequences.push(canonicalize_keep_first(r, n)?),
            RepetitionStrategy::Expand => {
                let expansion = expand_nonrepetitive(r, n, cap)?;
                if expansion.truncated {
                    truncated.push(r.source_id.clone());
                }
                sequences.extend(expansion.sequences);
            }
        }
    }
    Ok(Dataset {
        procedure: file.procedure,
        strategy: file.strategy,
        raw,
        set: SequenceSet::new(vocab, sequences)?,
        truncated,
    })
}

/// Serializes a dataset document in the on-disk format.
pub fn dataset_json(
    procedure: &str,
    vocab: &Vocabulary,
    records: &[DatasetRecord],
) -> serde_json::Value {
    serde_json::json!({
        "procedure": procedure,
        "taxonomy": vocab.names(),
        "sequences": records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abcd() -> Vocabulary {
        Vocabulary::new(["A", "B", "C", "D"]).unwrap()
    }

    fn raw(vocab: &Vocabulary, labels: &str) -> RawSequence {
        let steps = labels
            .chars()
            .map(|c| vocab.index_of(&c.to_string()).unwrap())
            .collect();
        RawSequence::new("r", steps, vocab).unwrap()
    }

    fn labels(vocab: &Vocabulary, seq: &KeyStepSequence) -> String {
        seq.steps()
            .iter()
            .map(|&i| match vocab.label(i) {
                START_LABEL => "S".to_string(),
                END_LABEL => "E".to_string(),
                l => l.to_string(),
            })
            .collect()
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_empty() {
        assert!(Vocabulary::new(["A", "A"]).is_err());
        assert!(Vocabulary::new(["A", ""]).is_err());
        assert!(Vocabulary::new(Vec::<String>::new()).is_err());
        let v = abcd();
        assert_eq!(v.size(), 6);
        assert_eq!(v.label(0), START_LABEL);
        assert_eq!(v.label(5), END_LABEL);
        assert_eq!(v.index_of("C"), Some(3));
    }

    #[test]
    fn keep_first_examples() {
        let v = abcd();
        let n = v.n();
        assert_eq!(
            labels(&v, &canonicalize_keep_first(&raw(&v, "BACAD"), n).unwrap()),
            "SBACDE"
        );
        assert_eq!(
            labels(&v, &canonicalize_keep_first(&raw(&v, "ABC"), n).unwrap()),
            "SABCE"
        );
        assert_eq!(
            labels(&v, &canonicalize_keep_first(&raw(&v, "AAA"), n).unwrap()),
            "SAE"
        );
    }

    #[test]
    fn empty_raw_is_rejected() {
        let v = abcd();
        assert!(RawSequence::new("x", vec![], &v).is_err());
        let r = RawSequence {
            source_id: "x".into(),
            steps: vec![],
        };
        assert!(matches!(
            canonicalize_keep_first(&r, 4),
            Err(TaskGraphError::InvalidInput(_))
        ));
        assert!(expand_nonrepetitive(&r, 4, 8).is_err());
    }

    #[test]
    fn expand_examples() {
        let v = abcd();
        let n = v.n();
        let out = expand_nonrepetitive(&raw(&v, "BACAD"), n, 64).unwrap();
        let got: Vec<String> = out.sequences.iter().map(|s| labels(&v, s)).collect();
        assert_eq!(got, vec!["SBACDE", "SBCADE"]);
        assert!(!out.truncated);

        let out = expand_nonrepetitive(&raw(&v, "ABC"), n, 64).unwrap();
        assert_eq!(out.sequences.len(), 1);
        assert_eq!(labels(&v, &out.sequences[0]), "SABCE");
    }

    #[test]
    fn expand_abab_matches_enumeration() {
        // kept-position combinations: (0,1) AB, (0,3) AB, (2,1) BA, (2,3) AB
        let v = abcd();
        let out = expand_nonrepetitive(&raw(&v, "ABAB"), v.n(), 8).unwrap();
        let got: Vec<String> = out.sequences.iter().map(|s| labels(&v, s)).collect();
        assert_eq!(got, vec!["SABE", "SBAE"]);
    }

    #[test]
    fn expand_truncates_at_cap() {
        let v = abcd();
        let r = raw(&v, "ABABCDCD");
        let full = expand_nonrepetitive(&r, v.n(), 64).unwrap();
        assert!(!full.truncated);
        let capped = expand_nonrepetitive(&r, v.n(), 3).unwrap();
        assert!(capped.truncated);
        assert!(capped.sequences.len() <= 3);
        assert_eq!(
            capped.sequences[0],
            canonicalize_keep_first(&r, v.n()).unwrap()
        );
    }

    #[test]
    fn dataset_roundtrip_and_errors() {
        let text =
            r#"{"procedure":"p","taxonomy":["A","B"],"sequences":[{"id":"r1","steps":["A","B"]}]}"#;
        let ds = parse_dataset(text).unwrap();
        assert_eq!(ds.set.len(), 1);
        assert_eq!(ds.set.sequences()[0].steps(), &[0, 1, 2, 3]);

        let bad =
            r#"{"procedure":"p","taxonomy":["A","B"],"sequences":[{"id":"r1","steps":["A","Z"]}]}"#;
        match parse_dataset(bad) {
            Err(TaskGraphError::UnknownLabel { label, record }) => {
                assert_eq!(label, "Z");
                assert_eq!(record, "r1");
            }
            other => panic!("expected schema error, got {other:?}"),
        }

        let malformed = "{\"procedure\":\"p\",\n\"taxonomy\":[\"A\",\n\"sequences\":[]}";
        match parse_dataset(malformed) {
            Err(TaskGraphError::Parse { line, .. }) => assert!(line >= 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dataset_keep_first_and_expand_strategies() {
        let text = r#"{"procedure":"p","taxonomy":["A","B","C","D"],
            "sequences":[{"id":"r1","steps":["B","A","C","A","D"]}]}"#;
        let ds = parse_dataset(text).unwrap();
        assert_eq!(labels(ds.vocab(), &ds.set.sequences()[0]), "SBACDE");

        let text = r#"{"procedure":"p","taxonomy":["A","B","C","D"],"strategy":"expand",
            "sequences":[{"id":"r1","steps":["B","A","C","A","D"]}]}"#;
        let ds = parse_dataset(text).unwrap();
        assert_eq!(ds.set.len(), 2);
    }
}
