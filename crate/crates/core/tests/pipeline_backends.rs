mod common;

use std::sync::Mutex;

use common::StubServer;
use explainpipe_core::corpus::labels;
use explainpipe_core::pipeline::{ChatExplainer, DEFAULT_EXPLANATION_PATTERN};
use explainpipe_core::rationales::{EchoChatBackend, RetryPolicy};
use explainpipe_core::{
    build_composite, remote_classifier, render_query, BackendError, ClassifierBackend, CompositeText, EndpointConfig,
    ExplainerBackend, GenerationParams, Label, Lexicon, LexiconClassifier, Pipeline, PipelineError, Preset,
    RemoteExplainer, TemplateExplainer,
};
use proptest::prelude::*;
use serde_json::json;

fn sentiment() -> Vec<Label> {
    labels(&["Positive", "Negative", "Neutral"])
}

fn lexicon() -> Lexicon {
    Lexicon::new()
        .with("Positive", &["great", "win", "love"])
        .with("Negative", &["awful", "lose", "hate"])
}

fn classifier() -> LexiconClassifier {
    LexiconClassifier::new(sentiment(), lexicon(), "Neutral".into()).unwrap()
}

/// Records every composite it is asked to explain.
#[derive(Default)]
struct Spy {
    seen: Mutex<Vec<String>>,
}

impl ExplainerBackend for Spy {
    fn id(&self) -> String {
        "spy".into()
    }
    fn explain(&self, composite: &CompositeText) -> Result<String, BackendError> {
        self.seen.lock().unwrap().push(composite.as_str().to_string());
        Ok(format!("seen: {composite}"))
    }
}

/// Fails on one specific text.
struct FailOn(&'static str);

impl ExplainerBackend for FailOn {
    fn id(&self) -> String {
        "fail-on".into()
    }
    fn explain(&self, composite: &CompositeText) -> Result<String, BackendError> {
        match composite.split() {
            Some((text, _)) if text == self.0 => Err(BackendError::Failed("explainer down".into())),
            _ => Ok("fine".into()),
        }
    }
}

fn instances(texts: &[&str]) -> Vec<(String, String)> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("i{i}"), t.to_string()))
        .collect()
}

#[test]
fn explainer_sees_exact_composite_of_prediction() {
    let clf = classifier();
    let spy = Spy::default();
    let batch = instances(&["a great win", "awful", "just words", "love it but hate it"]);
    let out = Pipeline::new(&clf, &spy).run_batch(&batch, 3).unwrap();
    let mut seen = spy.seen.lock().unwrap().clone();
    let mut expected: Vec<String> = out
        .records
        .iter()
        .map(|r| build_composite(&r.text, &r.predicted_label).unwrap().into_string())
        .collect();
    seen.sort();
    expected.sort();
    assert_eq!(seen, expected);
    for r in &out.records {
        assert_eq!(
            r.explanation,
            format!("seen: {} has {} label", r.text, r.predicted_label)
        );
    }
}

#[test]
fn batch_is_independent_of_parallelism() {
    let clf = classifier();
    let exp = TemplateExplainer::new(DEFAULT_EXPLANATION_PATTERN, lexicon());
    let batch = instances(&["great", "awful day", "ok", "win win lose"]);
    let p = Pipeline::new(&clf, &exp);
    let serial = p.run_batch(&batch, 1).unwrap();
    let parallel = p.run_batch(&batch, 4).unwrap();
    assert_eq!(serial, parallel);
    let ids: Vec<&str> = parallel.records.iter().map(|r| r.instance_id.as_str()).collect();
    assert_eq!(ids, ["i0", "i1", "i2", "i3"]);
}

#[test]
fn batch_collects_failures() {
    let clf = classifier();
    let exp = FailOn("second");
    let out = Pipeline::new(&clf, &exp)
        .run_batch(&instances(&["first", "second", "third"]), 2)
        .unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].instance_id, "i1");
}

/// Declares a concurrency limit and checks it is honoured.
struct Serial {
    inner: LexiconClassifier,
    busy: Mutex<bool>,
}

impl ClassifierBackend for Serial {
    fn id(&self) -> String {
        "serial".into()
    }
    fn label_set(&self) -> &[Label] {
        self.inner.label_set()
    }
    fn classify(&self, text: &str) -> Result<explainpipe_core::Classification, BackendError> {
        {
            let mut busy = self.busy.lock().unwrap();
            assert!(!*busy, "called concurrently");
            *busy = true;
        }
        std::thread::sleep(std::time::Duration::from_millis(2));
        let out = self.inner.classify(text);
        *self.busy.lock().unwrap() = false;
        out
    }
    fn max_in_flight(&self) -> Option<usize> {
        Some(1)
    }
}

#[test]
fn declared_in_flight_limit_is_respected() {
    let clf = Serial {
        inner: classifier(),
        busy: Mutex::new(false),
    };
    let exp = TemplateExplainer::default();
    let out = Pipeline::new(&clf, &exp)
        .run_batch(&instances(&["a", "b", "c", "d", "e", "f"]), 6)
        .unwrap();
    assert_eq!(out.records.len(), 6);
}

#[test]
fn classifier_failure_surfaces() {
    struct Broken;
    impl ClassifierBackend for Broken {
        fn id(&self) -> String {
            "broken".into()
        }
        fn label_set(&self) -> &[Label] {
            &[]
        }
        fn classify(&self, _: &str) -> Result<explainpipe_core::Classification, BackendError> {
            Ok(explainpipe_core::Classification::label("Anything"))
        }
    }
    let err = Pipeline::new(&Broken, &TemplateExplainer::default())
        .run_instance("x", "text")
        .unwrap_err();
    assert!(matches!(err, PipelineError::Classifier { .. }));
}

#[test]
fn remote_classifier_adapts_wire_format() {
    let server = StubServer::start(|req| match req.body["text"].as_str() {
        Some("neg") => (200, json!({"label": "Negative"})),
        Some("bogus") => (200, json!({"label": "Bogus"})),
        Some("scored") => (
            200,
            json!({"label": "Negative", "scores": {"Positive": 0.2, "Negative": 0.7, "Neutral": 0.1}}),
        ),
        Some("inconsistent") => (
            200,
            json!({"label": "Positive", "scores": {"Positive": 0.2, "Negative": 0.7}}),
        ),
        Some("schema") => (200, json!({"prediction": "Negative"})),
        _ => (500, json!({"error": "boom"})),
    });
    let clf = remote_classifier(EndpointConfig::new(&server.url), sentiment()).unwrap();
    assert_eq!(clf.classify("neg").unwrap().label, Label::from("Negative"));
    assert!(matches!(clf.classify("bogus"), Err(BackendError::OutOfSetLabel(_))));
    let scored = clf.classify("scored").unwrap();
    assert_eq!(scored.label, Label::from("Negative"));
    assert_eq!(scored.scores.unwrap().len(), 3);
    assert!(matches!(clf.classify("inconsistent"), Err(BackendError::Schema(_))));
    assert!(matches!(clf.classify("schema"), Err(BackendError::Schema(_))));
    assert!(matches!(
        clf.classify("other"),
        Err(BackendError::Status { status: 500, .. })
    ));
}

#[test]
fn remote_classifier_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let clf = remote_classifier(EndpointConfig::new(url), sentiment()).unwrap();
    let err = clf.classify("x").unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
    assert!(err.is_retryable());
}

#[test]
fn remote_explainer_and_auth_header() {
    std::env::set_var("EXPLAINPIPE_TEST_TOKEN", "sekret");
    let server = StubServer::start(|req| {
        let composite = req.body["composite"].as_str().unwrap_or_default();
        (200, json!({"explanation": format!("because {composite}")}))
    });
    let exp = RemoteExplainer::new(EndpointConfig::new(&server.url).with_auth_env("EXPLAINPIPE_TEST_TOKEN"));
    let clf = classifier();
    let rec = Pipeline::new(&clf, &exp).run_instance("a", "great").unwrap();
    assert_eq!(rec.explanation, "because great has Positive label");
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs[0].authorization.as_deref(), Some("Bearer sekret"));
}

#[test]
fn chat_explainer_wraps_composite_in_prompts() {
    let tpl = Preset::SentimentEn.template();
    let server = StubServer::start(|req| {
        let user = req.body["messages"][1]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        (
            200,
            json!({"choices": [{"message": {"role": "assistant", "content": format!(" {user} ")}}]}),
        )
    });
    let chat = explainpipe_core::ChatCompletionClient::new(EndpointConfig::new(&server.url), "meltemi");
    let exp = ChatExplainer::new(chat, tpl.clone(), GenerationParams::default()).unwrap();
    let composite = build_composite("the vote", &"Neutral".into()).unwrap();
    let out = exp.explain(&composite).unwrap();
    assert_eq!(out, render_query(&tpl, "the vote", &"Neutral".into()).unwrap());
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs[0].body["model"], "meltemi");
    assert_eq!(reqs[0].body["messages"][0]["role"], "system");
}

#[test]
fn chat_explainer_with_echo_backend_is_offline() {
    let exp = ChatExplainer::new(
        EchoChatBackend::new("{label}: {text}"),
        Preset::OffensiveEn.template(),
        GenerationParams {
            retry: RetryPolicy {
                attempts: 1,
                base_delay_ms: 0,
            },
            ..GenerationParams::default()
        },
    )
    .unwrap();
    let c = build_composite("you fool", &"Offensive".into()).unwrap();
    assert_eq!(exp.explain(&c).unwrap(), "Offensive: you fool");
}

proptest! {
    #[test]
    fn composite_shape(text in "\\PC{1,40}", label in "[A-Za-z][A-Za-z ]{0,15}") {
        let label = Label::from(label.as_str());
        let c = build_composite(&text, &label).unwrap();
        let suffix = format!(" has {} label", label);
        prop_assert!(c.as_str().starts_with(&text));
        prop_assert!(c.as_str().ends_with(&suffix));
        prop_assert_eq!(c.as_str().len(), text.len() + suffix.len());
    }

    #[test]
    fn rendered_query_has_no_placeholders(text in "[^{}]{1,40}", label in "[A-Za-z]{1,12}") {
        for preset in Preset::ALL {
            let q = render_query(&preset.template(), &text, &Label::from(label.as_str())).unwrap();
            prop_assert!(!q.contains(explainpipe_core::prompting::INPUT_TEXT_PLACEHOLDER));
            prop_assert!(!q.contains(explainpipe_core::prompting::LABEL_PLACEHOLDER));
            prop_assert_eq!(&q, &render_query(&preset.template(), &text, &Label::from(label.as_str())).unwrap());
        }
    }

    #[test]
    fn template_explainer_names_predicted_label(words in prop::collection::vec("great|awful|win|lose|meh|[a-z]{1,6}", 1..8)) {
        let text = words.join(" ");
        let clf = classifier();
        let exp = TemplateExplainer::new("Label={label}; terms={terms}", lexicon());
        let rec = Pipeline::new(&clf, &exp).run_instance("p", &text).unwrap();
        let label_token = rec.explanation.strip_prefix("Label=").and_then(|s| s.split(';').next()).unwrap();
        prop_assert_eq!(label_token, rec.predicted_label.as_str());
    }
}
