//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists (via JSON), so Python callers never see Rust-specific types.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use explainpipe_core::corpus::infer_label_set;
use explainpipe_core::pipeline::DEFAULT_EXPLANATION_PATTERN;
use explainpipe_core::study::StudyDefinition;
use explainpipe_core::{
    self as core, ConfusionMatrix, Label, Lexicon, LexiconClassifier, Pipeline, PredictionRecord, Preset, Rating,
    SplitSpec, StudyConfig, TemplateExplainer,
};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(explainpipe, ExplainpipeError, PyValueError);

fn err(e: impl std::fmt::Display) -> PyErr {
    ExplainpipeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn preset(name: &str) -> PyResult<core::PromptTemplate> {
    core::PromptTemplate::preset(name).map_err(err)
}

/// `"{text} has {label} label"`.
#[pyfunction]
fn build_composite(text: &str, label: &str) -> PyResult<String> {
    core::build_composite(text, &Label::from(label))
        .map(|c| c.into_string())
        .map_err(err)
}

/// Names of the built-in prompt templates.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    Preset::ALL.iter().map(|p| p.name()).collect()
}

#[pyfunction]
fn render_conditioning(preset_name: &str) -> PyResult<String> {
    core::render_conditioning(&preset(preset_name)?).map_err(err)
}

#[pyfunction]
fn render_query(preset_name: &str, text: &str, label: &str) -> PyResult<String> {
    core::render_query(&preset(preset_name)?, text, &Label::from(label)).map_err(err)
}

/// A validated, labeled dataset.
#[pyclass(frozen)]
struct Dataset {
    inner: core::Dataset,
}

#[pymethods]
impl Dataset {
    /// Reads a JSONL file of `{"id", "text", "label"}` records. Without
    /// `labels` the label set is taken from the file in order of appearance.
    #[staticmethod]
    #[pyo3(signature = (path, labels=None))]
    fn load(path: &str, labels: Option<Vec<String>>) -> PyResult<Self> {
        let open = || File::open(path).map(BufReader::new).map_err(err);
        let label_set = match labels {
            Some(l) => explainpipe_core::corpus::labels(&l),
            None => infer_label_set(open()?).map_err(err)?,
        };
        let inner = core::load_dataset(path, open()?, &label_set).map_err(err)?;
        Ok(Dataset { inner })
    }

    /// Builds a dataset from `(id, text, label)` tuples.
    #[staticmethod]
    fn from_records(name: &str, labels: Vec<String>, records: Vec<(String, String, String)>) -> PyResult<Self> {
        let instances = records
            .into_iter()
            .map(|(id, text, label)| core::LabeledInstance::new(id, text, label))
            .collect();
        let inner = core::Dataset::new(name, explainpipe_core::corpus::labels(&labels), instances).map_err(err)?;
        Ok(Dataset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn label_set(&self) -> Vec<String> {
        self.inner.label_set().iter().map(|l| l.to_string()).collect()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.instances().iter().map(|i| i.id.clone()).collect()
    }

    /// `{"total": n, "per_label": [{"label", "count", "percent"}]}` with
    /// `percent` as a fraction of the total.
    fn class_distribution<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &core::class_distribution(&self.inner))
    }

    /// Stratified split; returns `{"train", "val", "test", "seed", "ratios"}`.
    #[pyo3(signature = (seed=0, ratios=(0.7, 0.1, 0.2)))]
    fn split<'py>(&self, py: Python<'py>, seed: u64, ratios: (f64, f64, f64)) -> PyResult<Bound<'py, PyAny>> {
        let spec = SplitSpec::new(ratios.0, ratios.1, ratios.2, seed).map_err(err)?;
        let split = core::stratified_split(&self.inner, &spec).map_err(err)?;
        to_py(py, &core::SplitManifest::new(split, &spec))
    }

    /// Runs the keyword-lexicon classifier and template explainer over the
    /// given ids (all by default). Returns prediction records as dicts.
    #[pyo3(signature = (lexicon, default_label, ids=None, pattern=None, parallelism=1))]
    fn run_baseline<'py>(
        &self,
        py: Python<'py>,
        lexicon: BTreeMap<String, Vec<String>>,
        default_label: &str,
        ids: Option<Vec<String>>,
        pattern: Option<String>,
        parallelism: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut lex = Lexicon::new();
        for (label, words) in &lexicon {
            let words: Vec<&str> = words.iter().map(String::as_str).collect();
            lex = lex.with(label.as_str(), &words);
        }
        let clf =
            LexiconClassifier::new(self.inner.label_set().to_vec(), lex.clone(), default_label.into()).map_err(err)?;
        let exp = TemplateExplainer::new(pattern.as_deref().unwrap_or(DEFAULT_EXPLANATION_PATTERN), lex);
        let batch: Vec<(String, String)> = match ids {
            Some(ids) => ids
                .into_iter()
                .map(|id| match self.inner.get(&id) {
                    Some(inst) => Ok((id, inst.text.clone())),
                    None => Err(err(format!("unknown instance {id:?}"))),
                })
                .collect::<PyResult<_>>()?,
            None => self
                .inner
                .instances()
                .iter()
                .map(|i| (i.id.clone(), i.text.clone()))
                .collect(),
        };
        let out = py
            .detach(|| Pipeline::new(&clf, &exp).run_batch(&batch, parallelism))
            .map_err(err)?;
        if let Some(f) = out.failures.first() {
            return Err(err(format!("{}: {}", f.instance_id, f.error)));
        }
        to_py(py, &out.records)
    }
}

/// Balanced accuracy of a confusion matrix given as rows of gold, columns
/// of predicted counts.
#[pyfunction]
fn balanced_accuracy(labels: Vec<String>, counts: Vec<Vec<u64>>) -> PyResult<f64> {
    let cm = ConfusionMatrix::from_counts(explainpipe_core::corpus::labels(&labels), counts).map_err(err)?;
    core::balanced_accuracy(&cm).map_err(err)
}

/// `{"balanced_accuracy", "macro_f1", "per_class_f1": [...]}`.
#[pyfunction]
fn f1_report<'py>(py: Python<'py>, labels: Vec<String>, counts: Vec<Vec<u64>>) -> PyResult<Bound<'py, PyAny>> {
    let cm = ConfusionMatrix::from_counts(explainpipe_core::corpus::labels(&labels), counts).map_err(err)?;
    to_py(py, &core::f1_report(&cm))
}

/// A rating study over a fixed sample of prediction records.
#[pyclass(frozen)]
struct Study {
    inner: core::Study,
}

#[pymethods]
impl Study {
    /// Samples `per_label_target` records per predicted label (redistributing
    /// any shortfall) and opens a study. With `log_path` every rating is
    /// appended there and existing ratings are replayed.
    #[new]
    #[pyo3(signature = (records, labels, per_label_target=10, seed=0, metrics=None, scale=(1, 10), log_path=None))]
    fn new(
        records: &Bound<'_, PyAny>,
        labels: Vec<String>,
        per_label_target: usize,
        seed: u64,
        metrics: Option<Vec<String>>,
        scale: (i64, i64),
        log_path: Option<String>,
    ) -> PyResult<Self> {
        let records: Vec<PredictionRecord> = from_py(records)?;
        let mut config = StudyConfig {
            per_label_target,
            sampling_seed: seed,
            scale_min: scale.0,
            scale_max: scale.1,
            ..StudyConfig::default()
        };
        if let Some(m) = metrics {
            config.metric_names = m;
        }
        config.validate().map_err(err)?;
        let sample =
            core::sample_for_study(&records, &config, &explainpipe_core::corpus::labels(&labels)).map_err(err)?;
        let def = StudyDefinition { config, sample };
        let inner = core::Study::from_definition(def, log_path.map(Into::into)).map_err(err)?;
        Ok(Study { inner })
    }

    /// The sampled items in presentation order.
    fn items<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.sample().items)
    }

    fn quotas<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.sample().per_label_quota)
    }

    #[pyo3(signature = (rater_id, instance_id, scores, overwrite=false))]
    fn submit<'py>(
        &self,
        py: Python<'py>,
        rater_id: &str,
        instance_id: &str,
        scores: BTreeMap<String, i64>,
        overwrite: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut rating = Rating::new(rater_id, instance_id, &[]);
        rating.scores = scores;
        let ack = self.inner.submit_rating(rating, overwrite).map_err(err)?;
        to_py(py, &ack)
    }

    fn progress<'py>(&self, py: Python<'py>, rater_id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.progress(rater_id))
    }

    /// Per-label and overall means. Raises when there are no ratings.
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.aggregate().map_err(err)?)
    }

    fn report_table(&self) -> PyResult<String> {
        Ok(self.inner.aggregate().map_err(err)?.render_table())
    }
}

#[pymodule]
fn explainpipe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ExplainpipeError", m.py().get_type::<ExplainpipeError>())?;
    m.add_function(wrap_pyfunction!(build_composite, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(render_conditioning, m)?)?;
    m.add_function(wrap_pyfunction!(render_query, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(f1_report, m)?)?;
    m.add_class::<Dataset>()?;
    m.add_class::<Study>()?;
    Ok(())
}
