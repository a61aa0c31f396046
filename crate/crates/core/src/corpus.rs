//! Labeled text datasets: JSONL ingestion, class distributions and
//! deterministic stratified splits.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyed;

/// A class name. Labels compare as exact, case-sensitive strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(name: impl Into<String>) -> Self {
        Label(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_string())
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label(s)
    }
}

/// Builds a label list from string slices.
pub fn labels<S: AsRef<str>>(names: &[S]) -> Vec<Label> {
    names.iter().map(|n| Label::new(n.as_ref())).collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("label set contains an empty label name")]
    BlankLabel,
    #[error("label {0:?} appears more than once in the label set")]
    DuplicateLabel(String),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: instance {id:?} has label {label:?} which is not in the label set")]
    UnknownLabel { line: usize, id: String, label: String },
    #[error("line {line}: instance {id:?} has empty text")]
    EmptyText { line: usize, id: String },
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("read error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub id: String,
    pub text: String,
    #[serde(rename = "label")]
    pub gold_label: Label,
}

impl LabeledInstance {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: impl Into<Label>) -> Self {
        LabeledInstance {
            id: id.into(),
            text: text.into(),
            gold_label: label.into(),
        }
    }
}

/// A validated collection of labeled instances over a closed label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    label_set: Vec<Label>,
    instances: Vec<LabeledInstance>,
}

pub(crate) fn validate_label_set(label_set: &[Label]) -> Result<(), CorpusError> {
    if label_set.is_empty() {
        return Err(CorpusError::EmptyLabelSet);
    }
    let mut seen = HashSet::new();
    for label in label_set {
        if label.as_str().is_empty() {
            return Err(CorpusError::BlankLabel);
        }
        if !seen.insert(label) {
            return Err(CorpusError::DuplicateLabel(label.to_string()));
        }
    }
    Ok(())
}

impl Dataset {
    /// Validates and builds a dataset. Line numbers in errors are 1-based
    /// positions in `instances`.
    pub fn new(
        name: impl Into<String>,
        label_set: Vec<Label>,
        instances: Vec<LabeledInstance>,
    ) -> Result<Self, CorpusError> {
        validate_label_set(&label_set)?;
        let known: HashSet<&Label> = label_set.iter().collect();
        let mut ids = HashSet::new();
        for (i, inst) in instances.iter().enumerate() {
            check_instance(i + 1, inst, &known, &mut ids)?;
        }
        Ok(Dataset {
            name: name.into(),
            label_set,
            instances,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn label_set(&self) -> &[Label] {
        &self.label_set
    }

    pub fn instances(&self) -> &[LabeledInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Id lookup table for repeated access.
    pub fn index(&self) -> HashMap<&str, &LabeledInstance> {
        self.instances.iter().map(|i| (i.id.as_str(), i)).collect()
    }
}

fn check_instance<'a>(
    line: usize,
    inst: &'a LabeledInstance,
    known: &HashSet<&Label>,
    ids: &mut HashSet<&'a str>,
) -> Result<(), CorpusError> {
    if inst.id.is_empty() {
        return Err(CorpusError::Malformed {
            line,
            message: "id is empty".into(),
        });
    }
    if !ids.insert(inst.id.as_str()) {
        return Err(CorpusError::DuplicateId {
            line,
            id: inst.id.clone(),
        });
    }
    if inst.text.trim().is_empty() {
        return Err(CorpusError::EmptyText {
            line,
            id: inst.id.clone(),
        });
    }
    if !known.contains(&inst.gold_label) {
        return Err(CorpusError::UnknownLabel {
            line,
            id: inst.id.clone(),
            label: inst.gold_label.to_string(),
        });
    }
    Ok(())
}

/// Reads a JSONL dataset (`{"id", "text", "label"}` per line). Blank lines
/// are skipped; record order is preserved.
pub fn load_dataset<R: BufRead>(
    name: impl Into<String>,
    source: R,
    declared_label_set: &[Label],
) -> Result<Dataset, CorpusError> {
    validate_label_set(declared_label_set)?;
    let known: HashSet<&Label> = declared_label_set.iter().collect();
    let mut instances = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Io(format!("line {line_no}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: LabeledInstance = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        instances.push(inst);
        lines.push(line_no);
    }
    if instances.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut ids = HashSet::new();
    for (inst, &line_no) in instances.iter().zip(&lines) {
        check_instance(line_no, inst, &known, &mut ids)?;
    }
    Ok(Dataset {
        name: name.into(),
        label_set: declared_label_set.to_vec(),
        instances,
    })
}

/// Labels in first-appearance order, for callers that have no declared set.
pub fn infer_label_set<R: BufRead>(source: R) -> Result<Vec<Label>, CorpusError> {
    #[derive(Deserialize)]
    struct LabelOnly {
        label: Label,
    }
    let mut out: Vec<Label> = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelOnly = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !out.contains(&rec.label) {
            out.push(rec.label);
        }
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub label: Label,
    pub count: usize,
    pub percent: f64,
}

/// Per-label counts in label-set order. `percent` is a fraction of the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub total: usize,
    pub per_label: Vec<LabelShare>,
}

impl ClassDistribution {
    pub fn get(&self, label: &Label) -> Option<&LabelShare> {
        self.per_label.iter().find(|s| &s.label == label)
    }
}

pub fn class_distribution(ds: &Dataset) -> ClassDistribution {
    let mut counts: HashMap<&Label, usize> = HashMap::new();
    for inst in &ds.instances {
        *counts.entry(&inst.gold_label).or_default() += 1;
    }
    let total = ds.instances.len();
    let per_label = ds
        .label_set
        .iter()
        .map(|label| {
            let count = counts.get(label).copied().unwrap_or(0);
            let percent = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            LabelShare {
                label: label.clone(),
                count,
                percent,
            }
        })
        .collect();
    ClassDistribution { total, per_label }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_ratio: 0.7,
            val_ratio: 0.1,
            test_ratio: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(train_ratio: f64, val_ratio: f64, test_ratio: f64, seed: u64) -> Result<Self, CorpusError> {
        let spec = SplitSpec {
            train_ratio,
            val_ratio,
            test_ratio,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..SplitSpec::default()
        }
    }

    pub fn ratios(&self) -> [f64; 3] {
        [self.train_ratio, self.val_ratio, self.test_ratio]
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, r) in ["train", "val", "test"].iter().zip(self.ratios()) {
            if !(0.0..=1.0).contains(&r) {
                return Err(CorpusError::InvalidRatios(format!("{name} ratio {r} outside [0, 1]")));
            }
        }
        let sum: f64 = self.ratios().iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidRatios(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Number of items a ratio takes from a bucket of `n`. The small slack
/// absorbs binary representation error, e.g. 0.7 * 10 must give 7.
fn floor_share(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Splits each label bucket by a seed-keyed permutation: the first
/// `floor(train·n)` ids go to train, the next `floor(val·n)` to validation,
/// the remainder to test. Output lists follow dataset record order.
pub fn stratified_split(ds: &Dataset, spec: &SplitSpec) -> Result<CorpusSplit, CorpusError> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    #[derive(Clone, Copy)]
    enum Part {
        Train,
        Val,
        Test,
    }
    let mut assignment: HashMap<&str, Part> = HashMap::with_capacity(ds.len());
    for label in &ds.label_set {
        let bucket = ds
            .instances
            .iter()
            .filter(|i| &i.gold_label == label)
            .map(|i| i.id.as_str());
        let order = keyed::permute("split", spec.seed, bucket);
        let n = order.len();
        let n_train = floor_share(spec.train_ratio, n);
        let n_val = floor_share(spec.val_ratio, n).min(n - n_train);
        for (pos, id) in order.into_iter().enumerate() {
            let part = if pos < n_train {
                Part::Train
            } else if pos < n_train + n_val {
                Part::Val
            } else {
                Part::Test
            };
            assignment.insert(id, part);
        }
    }
    let mut split = CorpusSplit {
        train_ids: Vec::new(),
        val_ids: Vec::new(),
        test_ids: Vec::new(),
    };
    for inst in &ds.instances {
        let target = match assignment[inst.id.as_str()] {
            Part::Train => &mut split.train_ids,
            Part::Val => &mut split.val_ids,
            Part::Test => &mut split.test_ids,
        };
        target.push(inst.id.clone());
    }
    Ok(split)
}

/// On-disk form of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl SplitManifest {
    pub fn new(split: CorpusSplit, spec: &SplitSpec) -> Self {
        SplitManifest {
            train: split.train_ids,
            val: split.val_ids,
            test: split.test_ids,
            seed: spec.seed,
            ratios: spec.ratios(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
