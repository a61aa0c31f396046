use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use explainpipe_core::rationales::GenerationParams;
use explainpipe_core::{EndpointConfig, Label, PromptTemplate, StudyConfig};
use serde::{Deserialize, Serialize};

pub const SPLIT_FILE: &str = "split.json";
pub const RATIONALES_FILE: &str = "rationales.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const STUDY_FILE: &str = "study.json";
pub const RATINGS_FILE: &str = "ratings.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Baseline,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    #[default]
    Baseline,
    Remote,
    Chat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub endpoint: Option<EndpointConfig>,
    /// JSON file `{label: [keywords]}` for the baseline.
    pub lexicon: Option<PathBuf>,
    pub default_label: Option<Label>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub kind: ExplainerKind,
    pub endpoint: Option<EndpointConfig>,
    pub pattern: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    pub endpoint: EndpointConfig,
    pub model: String,
    #[serde(default)]
    pub generation: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub dataset: Option<PathBuf>,
    pub labels: Option<Vec<Label>>,
    /// Preset name (`sentiment-en`, `sentiment-el`, `offensive-en`,
    /// `offensive-el`) or a path to a template JSON file.
    pub template: String,
    pub classifier: ClassifierConfig,
    pub explainer: ExplainerConfig,
    pub chat: Option<ChatConfig>,
    pub study: StudyConfig,
    pub storage_dir: PathBuf,
    pub bind: String,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            dataset: None,
            labels: None,
            template: "sentiment-en".into(),
            classifier: ClassifierConfig::default(),
            explainer: ExplainerConfig::default(),
            chat: None,
            study: StudyConfig::default(),
            storage_dir: PathBuf::from("explainpipe-data"),
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("config not found: {}", path.display()))?;
        let mut cfg: AppConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        // relative paths in the config resolve against its directory
        if let Some(base) = path.parent() {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            if let Some(d) = cfg.dataset.as_mut() {
                resolve(d);
            }
            if let Some(l) = cfg.classifier.lexicon.as_mut() {
                resolve(l);
            }
            resolve(&mut cfg.storage_dir);
            if cfg.template.ends_with(".json") {
                let mut t = PathBuf::from(&cfg.template);
                resolve(&mut t);
                cfg.template = t.to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    /// Checks that referenced files exist and the storage directory is
    /// writable, creating it if needed.
    pub fn validate(&self) -> Result<()> {
        for path in [self.dataset.as_ref(), self.classifier.lexicon.as_ref()]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                bail!("referenced file does not exist: {}", path.display());
            }
        }
        self.study.validate()?;
        self.ensure_storage()?;
        Ok(())
    }

    pub fn ensure_storage(&self) -> Result<()> {
        fs::create_dir_all(&self.storage_dir)
            .with_context(|| format!("cannot create storage directory {}", self.storage_dir.display()))?;
        let probe = self.storage_dir.join(".write-probe");
        fs::write(&probe, b"")
            .with_context(|| format!("storage directory is not writable: {}", self.storage_dir.display()))?;
        let _ = fs::remove_file(probe);
        Ok(())
    }

    pub fn storage(&self, file: &str) -> PathBuf {
        self.storage_dir.join(file)
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        load_template(&self.template)
    }
}

pub fn load_template(spec: &str) -> Result<PromptTemplate> {
    let path = Path::new(spec);
    if spec.ends_with(".json") || path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("template file {spec}"))?;
        Ok(PromptTemplate::from_json(&text)?)
    } else {
        Ok(PromptTemplate::preset(spec)?)
    }
}
