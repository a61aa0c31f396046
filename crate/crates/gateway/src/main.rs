use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use explainpipe_core::pipeline::DEFAULT_EXPLANATION_PATTERN;
use explainpipe_core::rationales::EchoChatBackend;
use explainpipe_core::{
    remote_classifier, ChatBackend, ChatCompletionClient, ChatExplainer, ClassifierBackend, Dataset, EndpointConfig,
    ExplainerBackend, ExplainerFailurePolicy, GenerationParams, Label, Lexicon, LexiconClassifier, RemoteExplainer,
    SplitSpec, TemplateExplainer,
};
use explainpipe_gateway::commands::{self, RunOptions};
use explainpipe_gateway::config::{ClassifierKind, ExplainerKind, PREDICTIONS_FILE, RATIONALES_FILE, SPLIT_FILE};
use explainpipe_gateway::{error_json, AppConfig, AppState};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "explainpipe", version, about = "Classify texts and explain the predictions")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for split, rationale, prediction, study and rating files.
    #[arg(long, global = true)]
    storage: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// JSONL dataset with `id`, `text` and `label` per line.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated label set; inferred from the data when absent.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
}

#[derive(Args, Clone)]
struct SubsetArgs {
    /// Split manifest; defaults to `split.json` in storage when present.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Which part of the split to process.
    #[arg(long, default_value = "test")]
    part: String,
}

#[derive(Args, Clone)]
struct ChatArgs {
    /// Chat-completion endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    auth_env: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChatKind {
    /// Offline backend that fills a pattern from the request.
    Mock,
    Chat,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Baseline,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExplainerArg {
    Baseline,
    Remote,
    Chat,
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum FailurePolicyArg {
    Fail,
    Marker,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Per-label counts and percentages.
    Stats(DataArgs),
    /// Stratified train/val/test split.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train, val and test ratios.
        #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.1, 0.2])]
        ratios: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate rationales for a split part with a chat model.
    Rationales {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        subset: SubsetArgs,
        /// Preset name or template JSON file.
        #[arg(long)]
        template: Option<String>,
        #[arg(long, value_enum, default_value = "chat")]
        backend: ChatKind,
        #[command(flatten)]
        chat: ChatArgs,
        #[arg(long)]
        in_flight: Option<usize>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Classify and explain a split part, writing prediction records.
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        subset: SubsetArgs,
        #[arg(long, visible_alias = "backend", value_enum)]
        classifier: Option<ClassifierArg>,
        #[arg(long)]
        classifier_url: Option<String>,
        /// Keyword lexicon for the baseline classifier.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Label for texts without keyword hits; defaults to the last label.
        #[arg(long)]
        default_label: Option<String>,
        #[arg(long, value_enum)]
        explainer: Option<ExplainerArg>,
        #[arg(long)]
        explainer_url: Option<String>,
        /// Pattern for the baseline explainer.
        #[arg(long)]
        pattern: Option<String>,
        #[command(flatten)]
        chat: ChatArgs,
        #[arg(long)]
        template: Option<String>,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        #[arg(long, value_enum, default_value = "fail")]
        on_explainer_failure: FailurePolicyArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rating study management.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Serve the rating study over HTTP.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Sample prediction records for the study.
    Init {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        #[arg(long)]
        per_label: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Replace a study that already has ratings.
        #[arg(long)]
        force: bool,
    },
    /// Aggregate the ratings into per-label and overall means.
    Report {
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(storage) = cli.storage {
        cfg.storage_dir = storage;
    }
    if cli.config.is_some() {
        cfg.validate()?;
    }
    match cli.command {
        Command::Stats(data) => {
            let ds = dataset(&cfg, &data)?;
            print_json(&commands::stats(&ds))
        }
        Command::Split {
            data,
            seed,
            ratios,
            out,
        } => {
            let ds = dataset(&cfg, &data)?;
            cfg.ensure_storage()?;
            let [train, val, test] = ratios[..] else {
                bail!("--ratios takes exactly three values, got {}", ratios.len());
            };
            let spec = SplitSpec::new(train, val, test, seed)?;
            let out = out.unwrap_or_else(|| cfg.storage(SPLIT_FILE));
            let manifest = commands::split(&ds, &spec, Some(&out))?;
            print_json(&serde_json::json!({
                "out": out,
                "train": manifest.train.len(),
                "val": manifest.val.len(),
                "test": manifest.test.len(),
                "seed": seed,
            }))
        }
        Command::Rationales {
            data,
            subset,
            template,
            backend,
            chat,
            in_flight,
            cache,
        } => {
            let ds = dataset(&cfg, &data)?;
            cfg.ensure_storage()?;
            let ids = subset_ids(&cfg, &ds, &subset)?;
            let template = explainpipe_gateway::config::load_template(template.as_deref().unwrap_or(&cfg.template))?;
            let mut params = generation_params(&cfg);
            if let Some(n) = in_flight {
                params.max_in_flight = n;
            }
            let backend = chat_backend(&cfg, backend, &chat)?;
            let cache = cache.unwrap_or_else(|| cfg.storage(RATIONALES_FILE));
            let report = commands::rationales(&ds, &ids, &template, &*backend, &cache, &params)?;
            print_json(&report)
        }
        Command::Run {
            data,
            subset,
            classifier,
            classifier_url,
            lexicon,
            default_label,
            explainer,
            explainer_url,
            pattern,
            chat,
            template,
            parallelism,
            on_explainer_failure,
            out,
        } => {
            let ds = dataset(&cfg, &data)?;
            cfg.ensure_storage()?;
            let ids = subset_ids(&cfg, &ds, &subset)?;
            if let Some(l) = lexicon {
                cfg.classifier.lexicon = Some(l);
            }
            if let Some(d) = default_label {
                cfg.classifier.default_label = Some(Label::new(d));
            }
            if let Some(url) = classifier_url {
                cfg.classifier.endpoint = Some(EndpointConfig::new(url));
            }
            if let Some(url) = explainer_url {
                cfg.explainer.endpoint = Some(EndpointConfig::new(url));
            }
            if let Some(p) = pattern {
                cfg.explainer.pattern = Some(p);
            }
            if let Some(t) = template {
                cfg.template = t;
            }
            let clf = build_classifier(&cfg, &ds, classifier)?;
            let exp = build_explainer(&cfg, explainer, &chat)?;
            let out = out.unwrap_or_else(|| cfg.storage(PREDICTIONS_FILE));
            let opts = RunOptions {
                parallelism,
                on_explainer_failure: match on_explainer_failure {
                    FailurePolicyArg::Fail => ExplainerFailurePolicy::Fail,
                    FailurePolicyArg::Marker => ExplainerFailurePolicy::EmitMarker,
                },
                out: &out,
            };
            let (_, summary) = commands::run(&ds, &ids, &*clf, &*exp, &opts)?;
            print_json(&summary)
        }
        Command::Study(StudyCommand::Init {
            predictions,
            labels,
            per_label,
            seed,
            force,
        }) => {
            let path = predictions.unwrap_or_else(|| cfg.storage(PREDICTIONS_FILE));
            let records = commands::read_prediction_file(&path)?;
            let label_set = match labels
                .map(|l| explainpipe_core::corpus::labels(&l))
                .or(cfg.labels.clone())
            {
                Some(ls) => ls,
                None => commands::labels_of(&records),
            };
            let mut study_cfg = cfg.study.clone();
            if let Some(k) = per_label {
                study_cfg.per_label_target = k;
            }
            if let Some(s) = seed {
                study_cfg.sampling_seed = s;
            }
            study_cfg.validate()?;
            cfg.ensure_storage()?;
            let def = commands::study_init(&cfg.storage_dir, &records, &study_cfg, &label_set, force)?;
            print_json(&serde_json::json!({
                "items": def.sample.len(),
                "per_label_quota": def.sample.per_label_quota,
                "warnings": def.sample.warnings,
            }))
        }
        Command::Study(StudyCommand::Report { format }) => {
            let report = commands::study_report(&cfg.storage_dir)?;
            match format {
                ReportFormat::Json => println!("{}", report.to_json()),
                ReportFormat::Table => print!("{}", report.render_table()),
            }
            Ok(())
        }
        Command::Serve { bind } => {
            let bind = bind.unwrap_or_else(|| cfg.bind.clone());
            let state = AppState::open(&cfg.storage_dir)?;
            tokio::runtime::Runtime::new()?.block_on(explainpipe_gateway::serve(state, &bind))
        }
    }
}

fn dataset(cfg: &AppConfig, args: &DataArgs) -> Result<Dataset> {
    let path = args
        .dataset
        .clone()
        .or_else(|| cfg.dataset.clone())
        .context("no dataset given; pass --dataset or set `dataset` in the config")?;
    let declared = args
        .labels
        .as_ref()
        .map(|l| explainpipe_core::corpus::labels(l))
        .or_else(|| cfg.labels.clone());
    commands::load_corpus(&path, declared.as_deref())
}

/// Ids to process: the chosen part of the split when one exists, otherwise
/// the whole dataset.
fn subset_ids(cfg: &AppConfig, ds: &Dataset, args: &SubsetArgs) -> Result<Vec<String>> {
    let split = args.split.clone().or_else(|| {
        let default = cfg.storage(SPLIT_FILE);
        default.exists().then_some(default)
    });
    match split {
        Some(path) => commands::split_part(&commands::read_split(&path)?, &args.part),
        None => Ok(ds.instances().iter().map(|i| i.id.clone()).collect()),
    }
}

fn generation_params(cfg: &AppConfig) -> GenerationParams {
    cfg.chat.as_ref().map(|c| c.generation.clone()).unwrap_or_default()
}

fn chat_backend(cfg: &AppConfig, kind: ChatKind, args: &ChatArgs) -> Result<Box<dyn ChatBackend>> {
    Ok(match kind {
        ChatKind::Mock => Box::new(EchoChatBackend::default()),
        ChatKind::Chat => {
            let mut endpoint = cfg.chat.as_ref().map(|c| c.endpoint.clone());
            if let Some(url) = &args.endpoint {
                endpoint = Some(EndpointConfig::new(url));
            }
            let mut endpoint = endpoint.context("chat backend needs --endpoint or a `chat` config section")?;
            if let Some(var) = &args.auth_env {
                endpoint = endpoint.with_auth_env(var);
            }
            let model = args
                .model
                .clone()
                .or_else(|| cfg.chat.as_ref().map(|c| c.model.clone()))
                .context("chat backend needs --model or a `chat` config section")?;
            Box::new(ChatCompletionClient::new(endpoint, model))
        }
    })
}

fn read_lexicon(path: Option<&Path>) -> Result<Lexicon> {
    match path {
        Some(p) => commands::read_lexicon(p),
        None => Ok(Lexicon::new()),
    }
}

fn build_classifier(cfg: &AppConfig, ds: &Dataset, kind: Option<ClassifierArg>) -> Result<Box<dyn ClassifierBackend>> {
    let kind = match kind {
        Some(ClassifierArg::Baseline) => ClassifierKind::Baseline,
        Some(ClassifierArg::Remote) => ClassifierKind::Remote,
        None => cfg.classifier.kind.clone(),
    };
    let label_set = ds.label_set().to_vec();
    Ok(match kind {
        ClassifierKind::Baseline => {
            let Some(path) = cfg.classifier.lexicon.as_deref() else {
                bail!("baseline classifier needs --lexicon or `classifier.lexicon` in the config");
            };
            let default = cfg
                .classifier
                .default_label
                .clone()
                .unwrap_or_else(|| label_set.last().cloned().expect("dataset has labels"));
            Box::new(LexiconClassifier::new(label_set, read_lexicon(Some(path))?, default)?)
        }
        ClassifierKind::Remote => {
            let endpoint = cfg
                .classifier
                .endpoint
                .clone()
                .context("remote classifier needs --classifier-url or `classifier.endpoint`")?;
            Box::new(remote_classifier(endpoint, label_set)?)
        }
    })
}

fn build_explainer(cfg: &AppConfig, kind: Option<ExplainerArg>, chat: &ChatArgs) -> Result<Box<dyn ExplainerBackend>> {
    let kind = match kind {
        Some(ExplainerArg::Baseline) => ExplainerKind::Baseline,
        Some(ExplainerArg::Remote) => ExplainerKind::Remote,
        Some(ExplainerArg::Chat) => ExplainerKind::Chat,
        Some(ExplainerArg::Mock) => {
            let template = cfg.template()?;
            return Ok(Box::new(ChatExplainer::new(
                Box::new(EchoChatBackend::default()) as Box<dyn ChatBackend>,
                template,
                generation_params(cfg),
            )?));
        }
        None => cfg.explainer.kind.clone(),
    };
    Ok(match kind {
        ExplainerKind::Baseline => {
            let pattern = cfg.explainer.pattern.as_deref().unwrap_or(DEFAULT_EXPLANATION_PATTERN);
            Box::new(TemplateExplainer::new(
                pattern,
                read_lexicon(cfg.classifier.lexicon.as_deref())?,
            ))
        }
        ExplainerKind::Remote => {
            let endpoint = cfg
                .explainer
                .endpoint
                .clone()
                .context("remote explainer needs --explainer-url or `explainer.endpoint`")?;
            Box::new(RemoteExplainer::new(endpoint))
        }
        ExplainerKind::Chat => Box::new(ChatExplainer::new(
            chat_backend(cfg, ChatKind::Chat, chat)?,
            cfg.template()?,
            generation_params(cfg),
        )?),
    })
}
