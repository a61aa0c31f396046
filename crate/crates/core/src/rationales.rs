//! Rationale generation through a chat-completion model, with a resumable
//! JSONL cache.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{Dataset, Label, LabeledInstance};
use crate::http::{BackendError, EndpointConfig, JsonClient};
use crate::prompting::{render_conditioning, render_query, PromptError, PromptTemplate};

#[derive(Debug, Error)]
pub enum RationaleError {
    #[error("empty completion for {0}")]
    EmptyCompletion(String),
    #[error("backend failed for {id} after {attempts} attempt(s): {source}")]
    Backend {
        id: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Template(#[from] PromptError),
    #[error("instance {0:?} is not in the dataset")]
    UnknownInstance(String),
    #[error("rationale cache storage failure: {0}")]
    Storage(String),
    #[error("rationale cache line {line}: {message}")]
    CorruptCache { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// What a request is about. Not sent over the wire; lets local backends
/// (mocks, logs) see the instance without re-parsing the prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestContext {
    pub instance_id: String,
    pub text: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip)]
    pub context: Option<RequestContext>,
}

impl ChatRequest {
    /// System message = conditioning prompt, user message = rendered query.
    pub fn for_text(
        tpl: &PromptTemplate,
        text: &str,
        label: &Label,
        params: &GenerationParams,
    ) -> Result<ChatRequest, PromptError> {
        Ok(ChatRequest {
            messages: vec![
                ChatMessage {
                    role: Role::System,
                    content: render_conditioning(tpl)?,
                },
                ChatMessage {
                    role: Role::User,
                    content: render_query(tpl, text, label)?,
                },
            ],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            context: None,
        })
    }

    pub fn with_context(mut self, context: RequestContext) -> Self {
        self.context = Some(context);
        self
    }

    pub fn is_well_formed(&self) -> bool {
        matches!(
            self.messages.as_slice(),
            [
                ChatMessage { role: Role::System, .. },
                ChatMessage { role: Role::User, .. }
            ]
        ) && self.temperature >= 0.0
            && self.max_tokens > 0
    }

    /// Wire body for an OpenAI-style `/chat/completions` endpoint.
    pub fn to_wire(&self, model: &str) -> Value {
        json!({
            "model": model,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

/// A chat-completion model that answers one request with one completion.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Client for chat-completion compatible HTTP endpoints.
#[derive(Debug, Clone)]
pub struct ChatCompletionClient {
    client: JsonClient,
    model: String,
}

impl ChatCompletionClient {
    pub fn new(endpoint: EndpointConfig, model: impl Into<String>) -> Self {
        ChatCompletionClient {
            client: JsonClient::new(endpoint),
            model: model.into(),
        }
    }
}

/// Extracts `choices[0].message.content`.
pub fn parse_completion(response: &Value) -> Result<String, BackendError> {
    response
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Schema("missing string at choices[0].message.content".into()))
}

impl ChatBackend for ChatCompletionClient {
    fn id(&self) -> String {
        format!("chat:{}@{}", self.model, self.client.url())
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let response = self.client.post(&request.to_wire(&self.model))?;
        parse_completion(&response)
    }
}

/// Deterministic offline backend. `{label}`, `{text}` and `{id}` in the
/// pattern are filled from the request context.
#[derive(Debug, Clone)]
pub struct EchoChatBackend {
    pattern: String,
}

impl EchoChatBackend {
    pub fn new(pattern: impl Into<String>) -> Self {
        EchoChatBackend {
            pattern: pattern.into(),
        }
    }
}

impl Default for EchoChatBackend {
    fn default() -> Self {
        EchoChatBackend::new("The text is labelled {label} because of what it says: {text}")
    }
}

impl ChatBackend for EchoChatBackend {
    fn id(&self) -> String {
        "echo".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let ctx = request
            .context
            .as_ref()
            .ok_or_else(|| BackendError::Failed("echo backend needs a request context".into()))?;
        Ok(self
            .pattern
            .replace("{label}", ctx.label.as_str())
            .replace("{text}", &ctx.text)
            .replace("{id}", &ctx.instance_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Completions longer than this many characters are truncated.
    pub max_chars: usize,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            max_tokens: 256,
            max_chars: 2000,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub instance_id: String,
    pub label_used: Label,
    pub explanation: String,
    pub backend_id: String,
    pub template_fingerprint: String,
    pub created_at: String,
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Calls `f` up to `policy.attempts` times, sleeping `base · 2^k` between
/// retryable failures. Returns the result and the number of attempts made.
pub(crate) fn with_retry<T>(
    policy: &RetryPolicy,
    mut f: impl FnMut() -> Result<T, BackendError>,
) -> (Result<T, BackendError>, u32) {
    let attempts = policy.attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match f() {
            Err(e) if e.is_retryable() && attempt < attempts => {
                let delay = policy.base_delay_ms.saturating_mul(1 << (attempt - 1));
                log::warn!("retrying after {e} (attempt {attempt}/{attempts}, waiting {delay} ms)");
                thread::sleep(Duration::from_millis(delay));
            }
            other => return (other, attempt),
        }
    }
}

fn generate_counted(
    instance: &LabeledInstance,
    tpl: &PromptTemplate,
    backend: &dyn ChatBackend,
    params: &GenerationParams,
    calls: &AtomicUsize,
) -> Result<Rationale, RationaleError> {
    let request =
        ChatRequest::for_text(tpl, &instance.text, &instance.gold_label, params)?.with_context(RequestContext {
            instance_id: instance.id.clone(),
            text: instance.text.clone(),
            label: instance.gold_label.clone(),
        });
    let (result, attempts) = with_retry(&params.retry, || {
        calls.fetch_add(1, Ordering::Relaxed);
        backend.complete(&request)
    });
    let completion = result.map_err(|source| RationaleError::Backend {
        id: instance.id.clone(),
        attempts,
        source,
    })?;
    let mut explanation = completion.trim().to_string();
    if explanation.is_empty() {
        return Err(RationaleError::EmptyCompletion(instance.id.clone()));
    }
    if let Some((cut, _)) = explanation.char_indices().nth(params.max_chars) {
        log::warn!(
            "completion for {} exceeds {} characters; truncating",
            instance.id,
            params.max_chars
        );
        explanation.truncate(cut);
    }
    Ok(Rationale {
        instance_id: instance.id.clone(),
        label_used: instance.gold_label.clone(),
        explanation,
        backend_id: backend.id(),
        template_fingerprint: tpl.fingerprint(),
        created_at: now_rfc3339(),
    })
}

/// One rationale for the instance's gold label.
pub fn generate_rationale(
    instance: &LabeledInstance,
    tpl: &PromptTemplate,
    backend: &dyn ChatBackend,
    params: &GenerationParams,
) -> Result<Rationale, RationaleError> {
    generate_counted(instance, tpl, backend, params, &AtomicUsize::new(0))
}

/// Rationales keyed by instance id. When backed by a file, every insert is
/// appended immediately; later lines supersede earlier ones on load.
#[derive(Debug, Default)]
pub struct RationaleCache {
    entries: BTreeMap<String, Rationale>,
    path: Option<PathBuf>,
}

impl PartialEq for RationaleCache {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl RationaleCache {
    pub fn in_memory() -> Self {
        RationaleCache::default()
    }

    /// Opens a file-backed cache, loading existing entries if the file exists.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, RationaleError> {
        let path = path.into();
        let mut cache = if path.exists() {
            let file = File::open(&path).map_err(|e| RationaleError::Storage(e.to_string()))?;
            RationaleCache::from_reader(BufReader::new(file))?
        } else {
            RationaleCache::default()
        };
        cache.path = Some(path);
        Ok(cache)
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, RationaleError> {
        let mut entries = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| RationaleError::Storage(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Rationale = serde_json::from_str(&line).map_err(|e| RationaleError::CorruptCache {
                line: i + 1,
                message: e.to_string(),
            })?;
            if r.explanation.trim().is_empty() {
                return Err(RationaleError::CorruptCache {
                    line: i + 1,
                    message: format!("empty explanation for {}", r.instance_id),
                });
            }
            entries.insert(r.instance_id.clone(), r);
        }
        Ok(RationaleCache { entries, path: None })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, instance_id: &str) -> Option<&Rationale> {
        self.entries.get(instance_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Rationale> {
        self.entries.values()
    }

    /// A cache hit requires the same template fingerprint.
    pub fn is_fresh(&self, instance_id: &str, fingerprint: &str) -> bool {
        self.entries
            .get(instance_id)
            .is_some_and(|r| r.template_fingerprint == fingerprint)
    }

    pub fn insert(&mut self, rationale: Rationale) -> Result<(), RationaleError> {
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&rationale).expect("rationale serializes");
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| RationaleError::Storage(format!("{}: {e}", path.display())))?;
        }
        self.entries.insert(rationale.instance_id.clone(), rationale);
        Ok(())
    }

    /// One line per entry, sorted by instance id.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.entries.values() {
            out.push_str(&serde_json::to_string(r).expect("rationale serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes the compact form atomically.
    pub fn save(&self, path: &Path) -> Result<(), RationaleError> {
        let tmp = path.with_extension("jsonl.tmp");
        fs::write(&tmp, self.to_jsonl())
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|e| RationaleError::Storage(format!("{}: {e}", path.display())))
    }

    /// Rewrites the backing file without superseded lines.
    pub fn compact(&self) -> Result<(), RationaleError> {
        match &self.path {
            Some(path) => self.save(path),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenerationFailure {
    pub instance_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenerationReport {
    pub generated: Vec<String>,
    pub cache_hits: Vec<String>,
    pub failures: Vec<GenerationFailure>,
    pub backend_calls: usize,
}

/// Fills `cache` with a rationale for every id. Cached ids with a matching
/// template fingerprint are skipped. Up to `params.max_in_flight` backend
/// calls run at once; results are written by this thread only. Per-instance
/// failures go to the report; a storage failure aborts.
pub fn generate_corpus_rationales(
    ds: &Dataset,
    ids: &[String],
    tpl: &PromptTemplate,
    backend: &dyn ChatBackend,
    cache: &mut RationaleCache,
    params: &GenerationParams,
) -> Result<GenerationReport, RationaleError> {
    tpl.validate()?;
    let index = ds.index();
    let fingerprint = tpl.fingerprint();
    let mut report = GenerationReport::default();
    let mut seen = HashSet::new();
    let mut pending: Vec<&LabeledInstance> = Vec::new();
    for id in ids {
        let inst = *index
            .get(id.as_str())
            .ok_or_else(|| RationaleError::UnknownInstance(id.clone()))?;
        if !seen.insert(id.as_str()) {
            continue;
        }
        if cache.is_fresh(id, &fingerprint) {
            report.cache_hits.push(id.clone());
        } else {
            pending.push(inst);
        }
    }
    if pending.is_empty() {
        return Ok(report);
    }

    let calls = AtomicUsize::new(0);
    let next = Mutex::new(0usize);
    let workers = params.max_in_flight.clamp(1, pending.len());
    let mut outcomes: Vec<Option<Result<(), String>>> = vec![None; pending.len()];
    let mut storage_error = None;
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (pending, next, calls) = (&pending, &next, &calls);
            scope.spawn(move || loop {
                let slot = {
                    let mut n = next.lock().expect("work queue lock");
                    let slot = *n;
                    *n += 1;
                    slot
                };
                let Some(inst) = pending.get(slot) else { break };
                let result = generate_counted(inst, tpl, backend, params, calls);
                if tx.send((slot, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (slot, result) in rx {
            match result {
                Ok(rationale) => {
                    if storage_error.is_some() {
                        continue;
                    }
                    if let Err(e) = cache.insert(rationale) {
                        storage_error = Some(e);
                        // stop handing out work
                        *next.lock().expect("work queue lock") = pending.len();
                        continue;
                    }
                    outcomes[slot] = Some(Ok(()));
                }
                Err(e) => outcomes[slot] = Some(Err(e.to_string())),
            }
        }
    });
    if let Some(e) = storage_error {
        return Err(e);
    }
    for (inst, outcome) in pending.iter().zip(outcomes) {
        match outcome {
            Some(Ok(())) => report.generated.push(inst.id.clone()),
            Some(Err(error)) => report.failures.push(GenerationFailure {
                instance_id: inst.id.clone(),
                error,
            }),
            None => {}
        }
    }
    report.backend_calls = calls.into_inner();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::Preset;

    struct Fixed(Result<String, BackendError>);

    impl ChatBackend for Fixed {
        fn id(&self) -> String {
            "fixed".into()
        }
        fn complete(&self, _: &ChatRequest) -> Result<String, BackendError> {
            self.0.clone()
        }
    }

    fn fast() -> GenerationParams {
        GenerationParams {
            retry: RetryPolicy {
                attempts: 3,
                base_delay_ms: 0,
            },
            ..GenerationParams::default()
        }
    }

    #[test]
    fn request_shape() {
        let tpl = Preset::SentimentEn.template();
        let req = ChatRequest::for_text(&tpl, "T", &"Neutral".into(), &fast()).unwrap();
        assert!(req.is_well_formed());
        let wire = req.to_wire("m");
        assert_eq!(wire["model"], "m");
        assert_eq!(wire["messages"][0]["role"], "system");
        assert_eq!(wire["messages"][1]["role"], "user");
        assert_eq!(wire["temperature"], 0.0);
        assert!(wire.get("context").is_none());
    }

    #[test]
    fn echo_backend_label() {
        let inst = LabeledInstance::new("t1", "Great win", "Positive");
        let r = generate_rationale(
            &inst,
            &Preset::SentimentEn.template(),
            &EchoChatBackend::new("LABEL={label}"),
            &fast(),
        )
        .unwrap();
        assert_eq!(r.explanation, "LABEL=Positive");
        assert_eq!(r.label_used, Label::from("Positive"));
        assert_eq!(r.backend_id, "echo");
    }

    #[test]
    fn empty_completion_names_instance() {
        let inst = LabeledInstance::new("t1", "Great win", "Positive");
        let err = generate_rationale(
            &inst,
            &Preset::SentimentEn.template(),
            &Fixed(Ok("  \n".into())),
            &fast(),
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "empty completion for t1");
    }

    #[test]
    fn completion_is_trimmed_and_capped() {
        let inst = LabeledInstance::new("t1", "x", "Positive");
        let params = GenerationParams { max_chars: 5, ..fast() };
        let r = generate_rationale(
            &inst,
            &Preset::SentimentEn.template(),
            &Fixed(Ok("  αβγδεζηθ  ".into())),
            &params,
        )
        .unwrap();
        assert_eq!(r.explanation, "αβγδε");
    }

    #[test]
    fn transport_errors_retry_three_times() {
        let calls = AtomicUsize::new(0);
        let (res, attempts) = with_retry(&fast().retry, || {
            calls.fetch_add(1, Ordering::Relaxed);
            Err::<(), _>(BackendError::Transport("down".into()))
        });
        assert!(res.is_err());
        assert_eq!(attempts, 3);
        assert_eq!(calls.load(Ordering::Relaxed), 3);

        let (res, attempts) = with_retry(&fast().retry, || Err::<(), _>(BackendError::Schema("bad".into())));
        assert!(res.is_err());
        assert_eq!(attempts, 1);
    }

    #[test]
    fn parse_completion_requires_content() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(parse_completion(&ok).unwrap(), "hi");
        assert!(parse_completion(&json!({"choices": []})).is_err());
        assert!(parse_completion(&json!({"choices": [{"message": {"content": 3}}]})).is_err());
    }

    #[test]
    fn corrupt_cache_line_reported() {
        let err = RationaleCache::from_reader("{oops\n".as_bytes()).unwrap_err();
        assert!(matches!(err, RationaleError::CorruptCache { line: 1, .. }));
    }
}
