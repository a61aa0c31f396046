//! Human rating study: balanced sampling of predictions, rating collection
//! on a bounded integer scale, and two-level aggregation.
//!
//! Aggregation runs in exact rational arithmetic. An instance's mean is the
//! mean of the ratings it received; a label's mean is the mean of its
//! instance means; the overall mean is the mean of all instance means, so
//! it is weighted by instances, not by labels.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use indexmap::IndexMap;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Label;
use crate::keyed;
use crate::pipeline::PredictionRecord;

pub const PLAUSIBILITY: &str = "plausibility";
pub const COHERENCE: &str = "coherence";
pub const PERFIDIOUSNESS: &str = "perfidiousness";

#[derive(Debug, Error, PartialEq)]
pub enum StudyError {
    #[error("invalid study config: {0}")]
    Config(String),
    #[error("no prediction records to sample from")]
    NoRecords,
    #[error("only {available} record(s) for {labels} label(s); every label needs at least one")]
    TooFewRecords { available: usize, labels: usize },
    #[error("record {id:?} has label {label:?} which is not in the label set")]
    UnknownRecordLabel { id: String, label: String },
    #[error("record id {0:?} appears more than once")]
    DuplicateRecord(String),
    #[error("rater id is empty")]
    EmptyRater,
    #[error("instance {0:?} is not part of the study")]
    UnknownInstance(String),
    #[error("missing score for metric {0:?}")]
    MissingMetric(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("score {value} for {metric} is out of scale [{min}, {max}]")]
    OutOfScale {
        metric: String,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("rater {rater_id:?} already rated {instance_id:?}")]
    Duplicate { rater_id: String, instance_id: String },
    #[error("zero ratings")]
    ZeroRatings,
    #[error("rating log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("storage failure: {0}")]
    Storage(String),
}

impl StudyError {
    /// The rating field at fault, for field-level validation messages.
    pub fn field(&self) -> Option<String> {
        match self {
            StudyError::EmptyRater => Some("rater_id".into()),
            StudyError::UnknownInstance(_) => Some("instance_id".into()),
            StudyError::MissingMetric(m) | StudyError::UnknownMetric(m) => Some(format!("scores.{m}")),
            StudyError::OutOfScale { metric, .. } => Some(format!("scores.{metric}")),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub per_label_target: usize,
    pub metric_names: Vec<String>,
    pub scale_min: i64,
    pub scale_max: i64,
    pub sampling_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            per_label_target: 10,
            metric_names: vec![PLAUSIBILITY.into(), COHERENCE.into(), PERFIDIOUSNESS.into()],
            scale_min: 1,
            scale_max: 10,
            sampling_seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), StudyError> {
        if self.per_label_target == 0 {
            return Err(StudyError::Config("per_label_target must be positive".into()));
        }
        if self.scale_min >= self.scale_max {
            return Err(StudyError::Config(format!(
                "scale_min {} must be below scale_max {}",
                self.scale_min, self.scale_max
            )));
        }
        if self.metric_names.is_empty() {
            return Err(StudyError::Config("metric_names is empty".into()));
        }
        let mut seen = HashSet::new();
        for m in &self.metric_names {
            if m.is_empty() || !seen.insert(m) {
                return Err(StudyError::Config(format!("metric name {m:?} is empty or repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelQuota {
    pub label: Label,
    pub pool: usize,
    pub quota: usize,
}

/// The items every rater sees, in the order they see them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudySample {
    pub items: Vec<PredictionRecord>,
    pub per_label_quota: Vec<LabelQuota>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl StudySample {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn quota(&self, label: &Label) -> Option<usize> {
        self.per_label_quota.iter().find(|q| &q.label == label).map(|q| q.quota)
    }

    pub fn position(&self, instance_id: &str) -> Option<usize> {
        self.items.iter().position(|r| r.instance_id == instance_id)
    }
}

/// Per-label quotas: `min(k, pool)` each, then the shortfall is handed out
/// one slot at a time, round-robin over labels with spare records in
/// descending pool-size order (ties by label-set order).
pub fn allocate_quotas(pools: &[(Label, usize)], k: usize) -> (Vec<usize>, usize) {
    let mut quotas: Vec<usize> = pools.iter().map(|(_, p)| k.min(*p)).collect();
    let mut deficit: usize = pools.iter().map(|(_, p)| k.saturating_sub(*p)).sum();
    let mut order: Vec<usize> = (0..pools.len()).collect();
    // stable sort keeps label-set order among equal pools
    order.sort_by(|&a, &b| pools[b].1.cmp(&pools[a].1));
    while deficit > 0 {
        let mut placed = false;
        for &i in &order {
            if deficit == 0 {
                break;
            }
            if quotas[i] < pools[i].1 {
                quotas[i] += 1;
                deficit -= 1;
                placed = true;
            }
        }
        if !placed {
            break;
        }
    }
    (quotas, deficit)
}

/// Draws the study sample from `records`, bucketed by predicted label.
pub fn sample_for_study(
    records: &[PredictionRecord],
    cfg: &StudyConfig,
    label_set: &[Label],
) -> Result<StudySample, StudyError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(StudyError::NoRecords);
    }
    let mut ids = HashSet::new();
    let mut buckets: HashMap<&Label, Vec<&PredictionRecord>> = HashMap::new();
    for r in records {
        if !ids.insert(r.instance_id.as_str()) {
            return Err(StudyError::DuplicateRecord(r.instance_id.clone()));
        }
        if !label_set.contains(&r.predicted_label) {
            return Err(StudyError::UnknownRecordLabel {
                id: r.instance_id.clone(),
                label: r.predicted_label.to_string(),
            });
        }
        buckets.entry(&r.predicted_label).or_default().push(r);
    }
    if records.len() < label_set.len() {
        return Err(StudyError::TooFewRecords {
            available: records.len(),
            labels: label_set.len(),
        });
    }
    let pools: Vec<(Label, usize)> = label_set
        .iter()
        .map(|l| (l.clone(), buckets.get(l).map_or(0, Vec::len)))
        .collect();
    let (quotas, unplaced) = allocate_quotas(&pools, cfg.per_label_target);
    let mut warnings = Vec::new();
    if unplaced > 0 {
        let msg = format!(
            "only {} of {} requested items could be sampled; all pools exhausted",
            quotas.iter().sum::<usize>(),
            cfg.per_label_target * label_set.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut chosen: HashMap<&str, &PredictionRecord> = HashMap::new();
    for ((label, _), &quota) in pools.iter().zip(&quotas) {
        let Some(bucket) = buckets.get(label) else { continue };
        let by_id: HashMap<&str, &PredictionRecord> = bucket.iter().map(|r| (r.instance_id.as_str(), *r)).collect();
        let order = keyed::permute("study-sample", cfg.sampling_seed, by_id.keys().copied());
        for id in order.into_iter().take(quota) {
            chosen.insert(id, by_id[id]);
        }
    }
    let items = keyed::permute("study-order", cfg.sampling_seed, chosen.keys().copied())
        .into_iter()
        .map(|id| chosen[id].clone())
        .collect();
    let per_label_quota = pools
        .into_iter()
        .zip(quotas)
        .map(|((label, pool), quota)| LabelQuota { label, pool, quota })
        .collect();
    Ok(StudySample {
        items,
        per_label_quota,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub rater_id: String,
    pub instance_id: String,
    pub scores: BTreeMap<String, i64>,
    pub submitted_at: String,
    /// `submitted_at` of the rating this one replaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<String>,
}

impl Rating {
    pub fn new(rater_id: impl Into<String>, instance_id: impl Into<String>, scores: &[(&str, i64)]) -> Self {
        Rating {
            rater_id: rater_id.into(),
            instance_id: instance_id.into(),
            scores: scores.iter().map(|(m, s)| (m.to_string(), *s)).collect(),
            submitted_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            supersedes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acknowledgement {
    pub rater_id: String,
    pub instance_id: String,
    pub superseded: bool,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterProgress {
    pub rater_id: String,
    pub rated: usize,
    pub total: usize,
    /// Index of the first item this rater has not rated; `total` when done.
    pub cursor: usize,
}

/// Study definition as persisted next to the rating log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyDefinition {
    pub config: StudyConfig,
    pub sample: StudySample,
}

impl StudyDefinition {
    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = fs::read_to_string(path).map_err(|e| StudyError::Storage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| StudyError::Storage(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), StudyError> {
        let mut text = serde_json::to_string_pretty(self).expect("study serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| StudyError::Storage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Default)]
struct RatingLog {
    entries: Vec<Rating>,
    current: HashMap<(String, String), usize>,
    raters: BTreeSet<String>,
}

/// A study with its rating store. Writes are serialized by a lock and, when
/// file-backed, appended to the JSONL log before they become visible.
#[derive(Debug)]
pub struct Study {
    config: StudyConfig,
    sample: StudySample,
    log_path: Option<PathBuf>,
    log: RwLock<RatingLog>,
}

impl Study {
    pub fn new(config: StudyConfig, sample: StudySample) -> Result<Self, StudyError> {
        config.validate()?;
        Ok(Study {
            config,
            sample,
            log_path: None,
            log: RwLock::new(RatingLog::default()),
        })
    }

    /// Opens a file-backed study, replaying and re-validating an existing log.
    pub fn with_log(config: StudyConfig, sample: StudySample, path: impl Into<PathBuf>) -> Result<Self, StudyError> {
        let mut study = Study::new(config, sample)?;
        let path = path.into();
        if path.exists() {
            let file = File::open(&path).map_err(|e| StudyError::Storage(e.to_string()))?;
            study.replay(BufReader::new(file))?;
        }
        study.log_path = Some(path);
        Ok(study)
    }

    pub fn from_definition(def: StudyDefinition, log_path: Option<PathBuf>) -> Result<Self, StudyError> {
        match log_path {
            Some(path) => Study::with_log(def.config, def.sample, path),
            None => Study::new(def.config, def.sample),
        }
    }

    fn replay<R: BufRead>(&mut self, reader: R) -> Result<(), StudyError> {
        let log = self.log.get_mut().expect("rating log lock");
        for (i, line) in reader.lines().enumerate() {
            let corrupt = |message: String| StudyError::CorruptLog { line: i + 1, message };
            let line = line.map_err(|e| StudyError::Storage(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rating: Rating = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            validate_rating(&self.config, &self.sample, &rating).map_err(|e| corrupt(e.to_string()))?;
            let key = (rating.rater_id.clone(), rating.instance_id.clone());
            if log.current.contains_key(&key) && rating.supersedes.is_none() {
                return Err(corrupt(format!(
                    "second rating by {} for {} without supersedes",
                    key.0, key.1
                )));
            }
            log.raters.insert(rating.rater_id.clone());
            log.current.insert(key, log.entries.len());
            log.entries.push(rating);
        }
        Ok(())
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn sample(&self) -> &StudySample {
        &self.sample
    }

    pub fn definition(&self) -> StudyDefinition {
        StudyDefinition {
            config: self.config.clone(),
            sample: self.sample.clone(),
        }
    }

    pub fn register_rater(&self, rater_id: &str) -> Result<RaterProgress, StudyError> {
        if rater_id.trim().is_empty() {
            return Err(StudyError::EmptyRater);
        }
        self.log
            .write()
            .expect("rating log lock")
            .raters
            .insert(rater_id.to_string());
        Ok(self.progress(rater_id))
    }

    pub fn raters(&self) -> Vec<String> {
        self.log
            .read()
            .expect("rating log lock")
            .raters
            .iter()
            .cloned()
            .collect()
    }

    /// Validates and stores a rating. A second rating for the same
    /// `(rater, instance)` is rejected unless `overwrite` is set, in which
    /// case it is appended as a superseding entry.
    pub fn submit_rating(&self, mut rating: Rating, overwrite: bool) -> Result<Acknowledgement, StudyError> {
        validate_rating(&self.config, &self.sample, &rating)?;
        let mut log = self.log.write().expect("rating log lock");
        let key = (rating.rater_id.clone(), rating.instance_id.clone());
        let previous = log.current.get(&key).copied();
        rating.supersedes = None;
        if let Some(prev) = previous {
            if !overwrite {
                return Err(StudyError::Duplicate {
                    rater_id: key.0,
                    instance_id: key.1,
                });
            }
            rating.supersedes = Some(log.entries[prev].submitted_at.clone());
        }
        if let Some(path) = &self.log_path {
            let mut line = serde_json::to_string(&rating).expect("rating serializes");
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| StudyError::Storage(format!("{}: {e}", path.display())))?;
        }
        log.raters.insert(rating.rater_id.clone());
        let index = log.entries.len();
        log.current.insert(key.clone(), index);
        log.entries.push(rating);
        let cursor = cursor_for(&self.sample, &log, &key.0);
        Ok(Acknowledgement {
            rater_id: key.0,
            instance_id: key.1,
            superseded: previous.is_some(),
            cursor,
        })
    }

    pub fn progress(&self, rater_id: &str) -> RaterProgress {
        let log = self.log.read().expect("rating log lock");
        let rated = self
            .sample
            .items
            .iter()
            .filter(|item| {
                log.current
                    .contains_key(&(rater_id.to_string(), item.instance_id.clone()))
            })
            .count();
        RaterProgress {
            rater_id: rater_id.to_string(),
            rated,
            total: self.sample.len(),
            cursor: cursor_for(&self.sample, &log, rater_id),
        }
    }

    /// Current (non-superseded) ratings in submission order.
    pub fn ratings(&self) -> Vec<Rating> {
        let log = self.log.read().expect("rating log lock");
        let mut idx: Vec<usize> = log.current.values().copied().collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| log.entries[i].clone()).collect()
    }

    /// Every logged entry, superseded ones included.
    pub fn audit_log(&self) -> Vec<Rating> {
        self.log.read().expect("rating log lock").entries.clone()
    }

    pub fn aggregate(&self) -> Result<StudyReport, StudyError> {
        aggregate(&self.config, &self.sample, &self.ratings())
    }
}

fn cursor_for(sample: &StudySample, log: &RatingLog, rater_id: &str) -> usize {
    sample
        .items
        .iter()
        .position(|item| {
            !log.current
                .contains_key(&(rater_id.to_string(), item.instance_id.clone()))
        })
        .unwrap_or(sample.items.len())
}

/// Scale and completeness checks for one rating.
pub fn validate_rating(cfg: &StudyConfig, sample: &StudySample, rating: &Rating) -> Result<(), StudyError> {
    if rating.rater_id.trim().is_empty() {
        return Err(StudyError::EmptyRater);
    }
    if sample.position(&rating.instance_id).is_none() {
        return Err(StudyError::UnknownInstance(rating.instance_id.clone()));
    }
    if let Some(m) = rating.scores.keys().find(|m| !cfg.metric_names.contains(m)) {
        return Err(StudyError::UnknownMetric(m.clone()));
    }
    for metric in &cfg.metric_names {
        let value = *rating
            .scores
            .get(metric)
            .ok_or_else(|| StudyError::MissingMetric(metric.clone()))?;
        if value < cfg.scale_min || value > cfg.scale_max {
            return Err(StudyError::OutOfScale {
                metric: metric.clone(),
                value,
                min: cfg.scale_min,
                max: cfg.scale_max,
            });
        }
    }
    Ok(())
}

/// An exact mean. Serializes as a JSON number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mean(BigRational);

impl Mean {
    pub fn of(sum: BigRational, n: usize) -> Mean {
        Mean(sum / BigRational::from_integer(BigInt::from(n)))
    }

    pub fn exact(&self) -> &BigRational {
        &self.0
    }

    pub fn value(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Decimal rendering rounded half away from zero, computed exactly.
    pub fn to_fixed(&self, decimals: u32) -> String {
        let scale = BigInt::from(10u32).pow(decimals);
        let scaled = (&self.0 * BigRational::from_integer(scale.clone()))
            .round()
            .to_integer();
        let sign = if scaled.is_negative() { "-" } else { "" };
        let abs = scaled.abs();
        if decimals == 0 {
            return format!("{sign}{abs}");
        }
        let (whole, frac) = (&abs / &scale, &abs % &scale);
        format!("{sign}{whole}.{frac:0>width$}", width = decimals as usize)
    }
}

impl fmt::Display for Mean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_fixed(2))
    }
}

impl Serialize for Mean {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

pub type MetricMeans = IndexMap<String, Mean>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub per_label: IndexMap<Label, MetricMeans>,
    pub overall: MetricMeans,
    pub instance_means: IndexMap<String, MetricMeans>,
    pub rater_count: usize,
    pub rating_count: usize,
}

impl StudyReport {
    pub fn mean(&self, label: &Label, metric: &str) -> Option<&Mean> {
        self.per_label.get(label)?.get(metric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table: one row per label, one column per metric, plus an
    /// Overall row. Values at two decimals.
    pub fn render_table(&self) -> String {
        let metrics: Vec<&String> = self.overall.keys().collect();
        let header: Vec<String> = std::iter::once("Label".to_string())
            .chain(metrics.iter().map(|m| capitalize(m)))
            .collect();
        let mut rows: Vec<Vec<String>> = self
            .per_label
            .iter()
            .map(|(label, means)| {
                std::iter::once(label.to_string())
                    .chain(
                        metrics
                            .iter()
                            .map(|m| means.get(*m).map_or("-".into(), Mean::to_string)),
                    )
                    .collect()
            })
            .collect();
        rows.push(
            std::iter::once("Overall".to_string())
                .chain(metrics.iter().map(|m| self.overall[*m].to_string()))
                .collect(),
        );
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                rows.iter()
                    .chain(std::iter::once(&header))
                    .map(|r| r[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                let pad = w - cell.chars().count();
                if i == 0 {
                    let _ = write!(s, "{cell}{}", " ".repeat(pad));
                } else {
                    let _ = write!(s, "{}{cell}", " ".repeat(pad));
                }
            }
            s.trim_end().to_string()
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
        let mut out = String::new();
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        let (overall, label_rows) = rows.split_last().expect("overall row");
        for r in label_rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        out.push_str(&line(overall));
        out.push('\n');
        out
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Two-level aggregation over the current ratings. Instances nobody rated
/// are left out, as are labels with no rated instance.
pub fn aggregate(cfg: &StudyConfig, sample: &StudySample, ratings: &[Rating]) -> Result<StudyReport, StudyError> {
    if ratings.is_empty() {
        return Err(StudyError::ZeroRatings);
    }
    let mut by_instance: HashMap<&str, Vec<&Rating>> = HashMap::new();
    for r in ratings {
        validate_rating(cfg, sample, r)?;
        by_instance.entry(r.instance_id.as_str()).or_default().push(r);
    }
    let raters: HashSet<&str> = ratings.iter().map(|r| r.rater_id.as_str()).collect();

    let mut instance_means: IndexMap<String, MetricMeans> = IndexMap::new();
    for item in &sample.items {
        let Some(rs) = by_instance.get(item.instance_id.as_str()) else {
            continue;
        };
        let means = cfg
            .metric_names
            .iter()
            .map(|m| {
                let sum: BigInt = rs.iter().map(|r| BigInt::from(r.scores[m])).sum();
                (m.clone(), Mean::of(BigRational::from_integer(sum), rs.len()))
            })
            .collect();
        instance_means.insert(item.instance_id.clone(), means);
    }

    let mean_of = |ids: &[&str], metric: &str| -> Option<Mean> {
        if ids.is_empty() {
            return None;
        }
        let sum = ids
            .iter()
            .fold(BigRational::zero(), |acc, id| acc + instance_means[*id][metric].exact());
        Some(Mean::of(sum, ids.len()))
    };

    let mut per_label = IndexMap::new();
    for q in &sample.per_label_quota {
        let ids: Vec<&str> = sample
            .items
            .iter()
            .filter(|it| it.predicted_label == q.label && instance_means.contains_key(&it.instance_id))
            .map(|it| it.instance_id.as_str())
            .collect();
        if ids.is_empty() {
            continue;
        }
        let means: MetricMeans = cfg
            .metric_names
            .iter()
            .map(|m| (m.clone(), mean_of(&ids, m).expect("non-empty")))
            .collect();
        per_label.insert(q.label.clone(), means);
    }

    let all: Vec<&str> = instance_means.keys().map(String::as_str).collect();
    let overall = cfg
        .metric_names
        .iter()
        .map(|m| (m.clone(), mean_of(&all, m).expect("at least one rated instance")))
        .collect();
    Ok(StudyReport {
        per_label,
        overall,
        instance_means,
        rater_count: raters.len(),
        rating_count: ratings.len(),
    })
}
