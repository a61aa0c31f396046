//! Two-stage inference: classify a text, then explain the predicted label
//! from the composite text.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{validate_label_set, CorpusError, Label};
use crate::http::{BackendError, EndpointConfig, JsonClient};
use crate::prompting::{build_composite, CompositeText, PromptError, PromptTemplate};
use crate::rationales::{with_retry, ChatBackend, ChatRequest, GenerationParams, RequestContext};

/// Written in place of an explanation when the explainer failed and the
/// pipeline is configured to keep going.
pub const MISSING_EXPLANATION: &str = "[explanation unavailable]";

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: Label,
    pub scores: Option<BTreeMap<Label, f64>>,
}

impl Classification {
    pub fn label(label: impl Into<Label>) -> Self {
        Classification {
            label: label.into(),
            scores: None,
        }
    }
}

pub trait ClassifierBackend: Send + Sync {
    fn id(&self) -> String;
    fn label_set(&self) -> &[Label];
    fn classify(&self, text: &str) -> Result<Classification, BackendError>;
    /// Concurrent calls this backend tolerates; `None` means unbounded.
    fn max_in_flight(&self) -> Option<usize> {
        None
    }
}

pub trait ExplainerBackend: Send + Sync {
    fn id(&self) -> String;
    fn explain(&self, composite: &CompositeText) -> Result<String, BackendError>;
    fn max_in_flight(&self) -> Option<usize> {
        None
    }
}

/// Highest-scoring label; ties go to the label earliest in `label_set`.
/// Labels without a score are ignored.
pub fn argmax(scores: &BTreeMap<Label, f64>, label_set: &[Label]) -> Option<Label> {
    let mut best: Option<(&Label, f64)> = None;
    for label in label_set {
        if let Some(&s) = scores.get(label) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((label, s));
            }
        }
    }
    best.map(|(l, _)| l.clone())
}

/// Checks the classifier contract: the label is in the set and, when
/// scores are present, it is their argmax.
pub fn check_classification(c: &Classification, label_set: &[Label]) -> Result<(), BackendError> {
    if !label_set.contains(&c.label) {
        return Err(BackendError::OutOfSetLabel(c.label.to_string()));
    }
    if let Some(scores) = &c.scores {
        if let Some(unknown) = scores.keys().find(|l| !label_set.contains(l)) {
            return Err(BackendError::OutOfSetLabel(unknown.to_string()));
        }
        if let Some(s) = scores.values().find(|s| !s.is_finite()) {
            return Err(BackendError::Schema(format!("non-finite score {s}")));
        }
        let best = argmax(scores, label_set);
        if best.as_ref() != Some(&c.label) {
            return Err(BackendError::Schema(format!(
                "label {} is not the argmax of the scores ({})",
                c.label,
                best.map(|l| l.to_string()).unwrap_or_else(|| "none".into())
            )));
        }
    }
    Ok(())
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Keywords per label. Keywords are lowercased and matched as whole
/// (possibly multi-word) token sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon(BTreeMap<Label, Vec<String>>);

impl Lexicon {
    pub fn new() -> Self {
        Lexicon::default()
    }

    pub fn with(mut self, label: impl Into<Label>, keywords: &[&str]) -> Self {
        self.0
            .entry(label.into())
            .or_default()
            .extend(keywords.iter().map(|k| k.to_lowercase()));
        self
    }

    pub fn from_json(doc: &str) -> Result<Self, serde_json::Error> {
        let raw: BTreeMap<Label, Vec<String>> = serde_json::from_str(doc)?;
        Ok(Lexicon(
            raw.into_iter()
                .map(|(l, ks)| (l, ks.into_iter().map(|k| k.to_lowercase()).collect()))
                .collect(),
        ))
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.0.keys()
    }

    /// Keywords of `label` found in `text`, one entry per occurrence, in
    /// text order.
    pub fn matches(&self, label: &Label, text: &str) -> Vec<String> {
        let Some(keywords) = self.0.get(label) else {
            return Vec::new();
        };
        let toks = tokens(text);
        let patterns: Vec<(String, Vec<String>)> = keywords
            .iter()
            .map(|k| (k.clone(), tokens(k)))
            .filter(|(_, t)| !t.is_empty())
            .collect();
        let mut found = Vec::new();
        for start in 0..toks.len() {
            for (keyword, pat) in &patterns {
                if toks[start..].starts_with(pat) {
                    found.push(keyword.clone());
                }
            }
        }
        found
    }
}

/// Keyword-count baseline classifier.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    label_set: Vec<Label>,
    lexicon: Lexicon,
    default_label: Label,
}

impl LexiconClassifier {
    pub fn new(label_set: Vec<Label>, lexicon: Lexicon, default_label: Label) -> Result<Self, CorpusError> {
        validate_label_set(&label_set)?;
        let unknown = lexicon
            .labels()
            .chain(std::iter::once(&default_label))
            .find(|l| !label_set.contains(l));
        if let Some(l) = unknown {
            return Err(CorpusError::UnknownLabel {
                line: 0,
                id: "lexicon".into(),
                label: l.to_string(),
            });
        }
        Ok(LexiconClassifier {
            label_set,
            lexicon,
            default_label,
        })
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn predict(&self, text: &str) -> Label {
        let mut best: Option<(&Label, usize)> = None;
        for label in &self.label_set {
            let hits = self.lexicon.matches(label, text).len();
            if hits > 0 && best.is_none_or(|(_, b)| hits > b) {
                best = Some((label, hits));
            }
        }
        best.map(|(l, _)| l.clone())
            .unwrap_or_else(|| self.default_label.clone())
    }
}

impl ClassifierBackend for LexiconClassifier {
    fn id(&self) -> String {
        "lexicon".into()
    }

    fn label_set(&self) -> &[Label] {
        &self.label_set
    }

    fn classify(&self, text: &str) -> Result<Classification, BackendError> {
        Ok(Classification::label(self.predict(text)))
    }
}

/// Deterministic explainer that fills `{label}` and `{terms}` in a pattern.
/// The label is read from the composite's trailing `has X label`; terms are
/// the lexicon keywords of that label found in the text.
#[derive(Debug, Clone)]
pub struct TemplateExplainer {
    pattern: String,
    lexicon: Lexicon,
}

pub const DEFAULT_EXPLANATION_PATTERN: &str = "Labelled {label} due to {terms}.";
const NO_TERMS: &str = "its overall content";

impl TemplateExplainer {
    pub fn new(pattern: impl Into<String>, lexicon: Lexicon) -> Self {
        TemplateExplainer {
            pattern: pattern.into(),
            lexicon,
        }
    }

    pub fn render(&self, composite: &CompositeText) -> Result<String, BackendError> {
        let (text, label) = composite
            .split()
            .ok_or_else(|| BackendError::Failed(format!("not a composite text: {composite:?}")))?;
        let label = Label::new(label);
        let mut terms: Vec<String> = Vec::new();
        for t in self.lexicon.matches(&label, text) {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        let terms = if terms.is_empty() {
            NO_TERMS.to_string()
        } else {
            terms.join(", ")
        };
        Ok(self
            .pattern
            .replace("{label}", label.as_str())
            .replace("{terms}", &terms))
    }
}

impl Default for TemplateExplainer {
    fn default() -> Self {
        TemplateExplainer::new(DEFAULT_EXPLANATION_PATTERN, Lexicon::default())
    }
}

impl ExplainerBackend for TemplateExplainer {
    fn id(&self) -> String {
        "template".into()
    }

    fn explain(&self, composite: &CompositeText) -> Result<String, BackendError> {
        self.render(composite)
    }
}

/// Classifier served over HTTP: `POST {"text"}` → `{"label", "scores"?}`.
#[derive(Debug, Clone)]
pub struct RemoteClassifier {
    client: JsonClient,
    label_set: Vec<Label>,
}

pub fn remote_classifier(endpoint: EndpointConfig, label_set: Vec<Label>) -> Result<RemoteClassifier, CorpusError> {
    validate_label_set(&label_set)?;
    Ok(RemoteClassifier {
        client: JsonClient::new(endpoint),
        label_set,
    })
}

/// Parses and validates a remote classifier response.
pub fn parse_classification(body: &Value, label_set: &[Label]) -> Result<Classification, BackendError> {
    #[derive(Deserialize)]
    struct Wire {
        label: Label,
        #[serde(default)]
        scores: Option<BTreeMap<Label, f64>>,
    }
    let wire: Wire =
        serde_json::from_value(body.clone()).map_err(|e| BackendError::Schema(format!("classifier response: {e}")))?;
    let c = Classification {
        label: wire.label,
        scores: wire.scores,
    };
    check_classification(&c, label_set)?;
    Ok(c)
}

impl ClassifierBackend for RemoteClassifier {
    fn id(&self) -> String {
        format!("remote:{}", self.client.url())
    }

    fn label_set(&self) -> &[Label] {
        &self.label_set
    }

    fn classify(&self, text: &str) -> Result<Classification, BackendError> {
        let body = self.client.post(&json!({ "text": text }))?;
        parse_classification(&body, &self.label_set)
    }
}

/// Explainer served over HTTP: `POST {"composite"}` → `{"explanation"}`.
#[derive(Debug, Clone)]
pub struct RemoteExplainer {
    client: JsonClient,
}

impl RemoteExplainer {
    pub fn new(endpoint: EndpointConfig) -> Self {
        RemoteExplainer {
            client: JsonClient::new(endpoint),
        }
    }
}

impl ExplainerBackend for RemoteExplainer {
    fn id(&self) -> String {
        format!("remote:{}", self.client.url())
    }

    fn explain(&self, composite: &CompositeText) -> Result<String, BackendError> {
        let body = self.client.post(&json!({ "composite": composite.as_str() }))?;
        body.get("explanation")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Schema("missing string field \"explanation\"".into()))
    }
}

/// Explainer backed by a chat model, prompted with the same two messages
/// used for rationale generation.
pub struct ChatExplainer<B> {
    chat: B,
    template: PromptTemplate,
    params: GenerationParams,
}

impl<B: ChatBackend> ChatExplainer<B> {
    pub fn new(chat: B, template: PromptTemplate, params: GenerationParams) -> Result<Self, PromptError> {
        template.validate()?;
        Ok(ChatExplainer { chat, template, params })
    }
}

impl<B: ChatBackend> ExplainerBackend for ChatExplainer<B> {
    fn id(&self) -> String {
        self.chat.id()
    }

    fn explain(&self, composite: &CompositeText) -> Result<String, BackendError> {
        let (text, label) = composite
            .split()
            .ok_or_else(|| BackendError::Failed(format!("not a composite text: {composite:?}")))?;
        let label = Label::new(label);
        let request = ChatRequest::for_text(&self.template, text, &label, &self.params)
            .map_err(|e| BackendError::Failed(e.to_string()))?
            .with_context(RequestContext {
                instance_id: String::new(),
                text: text.to_string(),
                label,
            });
        let (result, _) = with_retry(&self.params.retry, || self.chat.complete(&request));
        Ok(result?.trim().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub text: String,
    pub predicted_label: Label,
    pub explanation: String,
    pub classifier_id: String,
    pub explainer_id: String,
}

pub fn predictions_to_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("classifier failed on {id}: {source}")]
    Classifier {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error("explainer failed on {id}: {source}")]
    Explainer {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error("explainer returned an empty explanation for {0}")]
    EmptyExplanation(String),
    #[error("instance {id}: {source}")]
    Composite {
        id: String,
        #[source]
        source: PromptError,
    },
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerFailurePolicy {
    #[default]
    Fail,
    /// Emit the record with [`MISSING_EXPLANATION`] and log a warning.
    EmitMarker,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceFailure {
    pub instance_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BatchOutput {
    pub records: Vec<PredictionRecord>,
    pub failures: Vec<InstanceFailure>,
}

pub struct Pipeline<'a> {
    classifier: &'a dyn ClassifierBackend,
    explainer: &'a dyn ExplainerBackend,
    on_explainer_failure: ExplainerFailurePolicy,
}

impl<'a> Pipeline<'a> {
    pub fn new(classifier: &'a dyn ClassifierBackend, explainer: &'a dyn ExplainerBackend) -> Self {
        Pipeline {
            classifier,
            explainer,
            on_explainer_failure: ExplainerFailurePolicy::Fail,
        }
    }

    pub fn on_explainer_failure(mut self, policy: ExplainerFailurePolicy) -> Self {
        self.on_explainer_failure = policy;
        self
    }

    pub fn run_instance(&self, id: &str, text: &str) -> Result<PredictionRecord, PipelineError> {
        let classification = self
            .classifier
            .classify(text)
            .and_then(|c| check_classification(&c, self.classifier.label_set()).map(|_| c))
            .map_err(|source| PipelineError::Classifier {
                id: id.to_string(),
                source,
            })?;
        let predicted = classification.label;
        let composite = build_composite(text, &predicted).map_err(|source| PipelineError::Composite {
            id: id.to_string(),
            source,
        })?;
        let explained = match self.explainer.explain(&composite) {
            Ok(e) if e.trim().is_empty() => Err(PipelineError::EmptyExplanation(id.to_string())),
            Ok(e) => Ok(e),
            Err(source) => Err(PipelineError::Explainer {
                id: id.to_string(),
                source,
            }),
        };
        let explanation = match (explained, self.on_explainer_failure) {
            (Ok(e), _) => e,
            (Err(e), ExplainerFailurePolicy::EmitMarker) => {
                log::warn!("{e}; emitting record without explanation");
                MISSING_EXPLANATION.to_string()
            }
            (Err(e), ExplainerFailurePolicy::Fail) => return Err(e),
        };
        Ok(PredictionRecord {
            instance_id: id.to_string(),
            text: text.to_string(),
            predicted_label: predicted,
            explanation,
            classifier_id: self.classifier.id(),
            explainer_id: self.explainer.id(),
        })
    }

    /// Runs every instance with up to `parallelism` workers, capped by the
    /// backends' declared limits. Records keep input order.
    pub fn run_batch(&self, instances: &[(String, String)], parallelism: usize) -> Result<BatchOutput, PipelineError> {
        if parallelism == 0 {
            return Err(PipelineError::InvalidParallelism);
        }
        let limit = [
            Some(parallelism),
            self.classifier.max_in_flight(),
            self.explainer.max_in_flight(),
        ]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(1)
        .max(1);
        let workers = limit.min(instances.len());
        let results: Vec<Mutex<Option<Result<PredictionRecord, PipelineError>>>> =
            instances.iter().map(|_| Mutex::new(None)).collect();
        let next = Mutex::new(0usize);
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let slot = {
                        let mut n = next.lock().expect("work queue lock");
                        let slot = *n;
                        *n += 1;
                        slot
                    };
                    let Some((id, text)) = instances.get(slot) else { break };
                    let outcome = self.run_instance(id, text);
                    *results[slot].lock().expect("result slot lock") = Some(outcome);
                });
            }
        });
        let mut out = BatchOutput::default();
        for ((id, _), slot) in instances.iter().zip(results) {
            match slot.into_inner().expect("result slot lock") {
                Some(Ok(record)) => out.records.push(record),
                Some(Err(e)) => out.failures.push(InstanceFailure {
                    instance_id: id.clone(),
                    error: e.to_string(),
                }),
                None => unreachable!("every slot is processed"),
            }
        }
        Ok(out)
    }
}

/// Convenience index of records by instance id.
pub fn index_predictions(records: &[PredictionRecord]) -> HashMap<&str, &PredictionRecord> {
    records.iter().map(|r| (r.instance_id.as_str(), r)).collect()
}
