//! Text classification with natural-language explanations.
//!
//! A classifier predicts a label, the label is folded into a composite text
//! (`"{text} has {label} label"`) and an explanation generator explains it.
//! Around that two-stage pipeline the crate provides dataset ingestion and
//! stratified splitting, prompt templates and a resumable rationale cache
//! for producing explainer training data with a chat model, classification
//! metrics, and the machinery for a human rating study of the explanations.

pub mod corpus;
pub mod fixtures;
pub mod http;
mod keyed;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod rationales;
pub mod study;

pub use corpus::{
    class_distribution, load_dataset, stratified_split, ClassDistribution, CorpusError, CorpusSplit, Dataset, Label,
    LabeledInstance, SplitManifest, SplitSpec,
};
pub use http::{BackendError, EndpointConfig};
pub use metrics::{balanced_accuracy, confusion, f1_report, ClassificationReport, ConfusionMatrix, MetricsError};
pub use pipeline::{
    remote_classifier, ChatExplainer, Classification, ClassifierBackend, ExplainerBackend, ExplainerFailurePolicy,
    Lexicon, LexiconClassifier, Pipeline, PipelineError, PredictionRecord, RemoteExplainer, TemplateExplainer,
};
pub use prompting::{
    build_composite, render_conditioning, render_query, CompositeText, Preset, PromptError, PromptTemplate,
};
pub use rationales::{
    generate_corpus_rationales, generate_rationale, ChatBackend, ChatCompletionClient, ChatRequest, EchoChatBackend,
    GenerationParams, Rationale, RationaleCache, RationaleError,
};
pub use study::{aggregate, sample_for_study, Rating, Study, StudyConfig, StudyError, StudyReport, StudySample};
