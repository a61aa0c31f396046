use std::fs::{self, File};
use std::io::{BufReader, Cursor};
use std::path::Path;

use anyhow::{bail, Context, Result};
use explainpipe_core::corpus::infer_label_set;
use explainpipe_core::pipeline::{predictions_to_jsonl, read_predictions, BatchOutput};
use explainpipe_core::rationales::GenerationReport;
use explainpipe_core::study::StudyDefinition;
use explainpipe_core::{
    class_distribution, confusion, f1_report, generate_corpus_rationales, load_dataset, sample_for_study,
    stratified_split, ChatBackend, ClassDistribution, ClassificationReport, ClassifierBackend, Dataset,
    ExplainerBackend, ExplainerFailurePolicy, GenerationParams, Label, Lexicon, Pipeline, PredictionRecord,
    PromptTemplate, RationaleCache, SplitManifest, SplitSpec, Study, StudyConfig, StudyReport,
};
use serde::Serialize;

use crate::config::{RATINGS_FILE, REPORT_FILE, STUDY_FILE};

/// Loads a JSONL dataset. Without a declared label set the labels are taken
/// from the file in first-appearance order.
pub fn load_corpus(path: &Path, declared: Option<&[Label]>) -> Result<Dataset> {
    let bytes = fs::read(path).with_context(|| format!("cannot read dataset {}", path.display()))?;
    let label_set = match declared {
        Some(ls) => ls.to_vec(),
        None => infer_label_set(Cursor::new(&bytes)).with_context(|| format!("dataset {}", path.display()))?,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_dataset(name, Cursor::new(bytes), &label_set).with_context(|| format!("dataset {}", path.display()))
}

pub fn stats(ds: &Dataset) -> ClassDistribution {
    class_distribution(ds)
}

pub fn split(ds: &Dataset, spec: &SplitSpec, out: Option<&Path>) -> Result<SplitManifest> {
    let manifest = SplitManifest::new(stratified_split(ds, spec)?, spec);
    if let Some(out) = out {
        write_atomic(out, manifest.to_json().as_bytes())?;
    }
    Ok(manifest)
}

pub fn read_split(path: &Path) -> Result<SplitManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read split {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid split manifest {}", path.display()))
}

/// Ids of one part (`train`, `val`, `test`) of a split.
pub fn split_part(manifest: &SplitManifest, part: &str) -> Result<Vec<String>> {
    Ok(match part {
        "train" => manifest.train.clone(),
        "val" => manifest.val.clone(),
        "test" => manifest.test.clone(),
        other => bail!("unknown split part {other:?}; expected train, val or test"),
    })
}

pub fn rationales(
    ds: &Dataset,
    ids: &[String],
    template: &PromptTemplate,
    backend: &dyn ChatBackend,
    cache_path: &Path,
    params: &GenerationParams,
) -> Result<GenerationReport> {
    let mut cache = RationaleCache::open(cache_path)?;
    let report = generate_corpus_rationales(ds, ids, template, backend, &mut cache, params)?;
    // rewrite superseded lines away once the run is done
    cache.compact()?;
    Ok(report)
}

pub fn read_lexicon(path: &Path) -> Result<Lexicon> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read lexicon {}", path.display()))?;
    Lexicon::from_json(&text).with_context(|| format!("invalid lexicon {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub written: usize,
    pub failures: Vec<explainpipe_core::pipeline::InstanceFailure>,
    /// Scored against the gold labels; absent when nothing was written.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ClassificationReport>,
}

pub struct RunOptions<'a> {
    pub parallelism: usize,
    pub on_explainer_failure: ExplainerFailurePolicy,
    pub out: &'a Path,
}

/// Runs the two-stage pipeline over `ids` of `ds`, writes the prediction
/// records as JSONL and scores them against the gold labels.
pub fn run(
    ds: &Dataset,
    ids: &[String],
    classifier: &dyn ClassifierBackend,
    explainer: &dyn ExplainerBackend,
    opts: &RunOptions,
) -> Result<(BatchOutput, RunSummary)> {
    let batch: Vec<(String, String)> = ids
        .iter()
        .map(|id| {
            ds.get(id)
                .map(|inst| (id.clone(), inst.text.clone()))
                .with_context(|| format!("instance {id:?} is not in the dataset"))
        })
        .collect::<Result<_>>()?;
    let output = Pipeline::new(classifier, explainer)
        .on_explainer_failure(opts.on_explainer_failure)
        .run_batch(&batch, opts.parallelism)?;
    write_atomic(opts.out, predictions_to_jsonl(&output.records).as_bytes())?;

    let metrics = if output.records.is_empty() {
        None
    } else {
        let pairs: Vec<(&Label, &Label)> = output
            .records
            .iter()
            .filter_map(|r| ds.get(&r.instance_id).map(|g| (&g.gold_label, &r.predicted_label)))
            .collect();
        Some(f1_report(&confusion(pairs, ds.label_set())?))
    };
    let summary = RunSummary {
        written: output.records.len(),
        failures: output.failures.clone(),
        metrics,
    };
    Ok((output, summary))
}

pub fn read_prediction_file(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).with_context(|| format!("cannot read predictions {}", path.display()))?;
    read_predictions(BufReader::new(file)).with_context(|| format!("predictions {}", path.display()))
}

/// Label set in first-appearance order over the records.
pub fn labels_of(records: &[PredictionRecord]) -> Vec<Label> {
    let mut out: Vec<Label> = Vec::new();
    for r in records {
        if !out.contains(&r.predicted_label) {
            out.push(r.predicted_label.clone());
        }
    }
    out
}

/// Draws the study sample and writes `study.json` into `storage`. Refuses to
/// replace a study that already has ratings unless `force` is set.
pub fn study_init(
    storage: &Path,
    records: &[PredictionRecord],
    cfg: &StudyConfig,
    label_set: &[Label],
    force: bool,
) -> Result<StudyDefinition> {
    let ratings = storage.join(RATINGS_FILE);
    let has_ratings = fs::metadata(&ratings).map(|m| m.len() > 0).unwrap_or(false);
    if has_ratings && !force {
        bail!(
            "{} already holds ratings; pass --force to start a new study",
            ratings.display()
        );
    }
    let sample = sample_for_study(records, cfg, label_set)?;
    let def = StudyDefinition {
        config: cfg.clone(),
        sample,
    };
    fs::create_dir_all(storage).with_context(|| format!("cannot create {}", storage.display()))?;
    def.save(&storage.join(STUDY_FILE))?;
    if has_ratings {
        fs::remove_file(&ratings).with_context(|| format!("cannot remove {}", ratings.display()))?;
    }
    Ok(def)
}

pub fn open_study(storage: &Path) -> Result<Study> {
    let path = storage.join(STUDY_FILE);
    if !path.exists() {
        bail!("no study at {}; run `study init` first", path.display());
    }
    let def = StudyDefinition::load(&path)?;
    Ok(Study::from_definition(def, Some(storage.join(RATINGS_FILE)))?)
}

/// Aggregates the stored ratings and writes `report.json`.
pub fn study_report(storage: &Path) -> Result<StudyReport> {
    let report = open_study(storage)?.aggregate()?;
    write_atomic(&storage.join(REPORT_FILE), format!("{}\n", report.to_json()).as_bytes())?;
    Ok(report)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
