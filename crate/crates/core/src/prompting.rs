//! Prompt templates for the rationale-generating chat model and the
//! composite text that conditions the explainer on a label.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Label;

pub const INPUT_TEXT_PLACEHOLDER: &str = "{input_text}";
pub const LABEL_PLACEHOLDER: &str = "{label}";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("text is empty")]
    EmptyText,
    #[error("conditioning text is empty")]
    EmptyConditioning,
    #[error("query text must contain {placeholder} exactly once (found {count})")]
    Placeholder { placeholder: &'static str, count: usize },
    #[error("unknown template preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid template document: {0}")]
    Parse(String),
}

/// The explainer input: `"{text} has {label} label"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompositeText(String);

impl CompositeText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    /// Wraps a string received over the wire without checking its shape.
    pub fn from_raw(value: impl Into<String>) -> Self {
        CompositeText(value.into())
    }

    /// Splits the composite back into `(text, label)` at the last `" has "`.
    /// Returns `None` when the trailing `" has X label"` segment is absent.
    pub fn split(&self) -> Option<(&str, &str)> {
        let body = self.0.strip_suffix(" label")?;
        let at = body.rfind(" has ")?;
        let (text, rest) = body.split_at(at);
        let label = &rest[" has ".len()..];
        if label.is_empty() {
            return None;
        }
        Some((text, label))
    }
}

impl fmt::Display for CompositeText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Joins the input text and label into the explainer input. Inputs are used
/// verbatim.
pub fn build_composite(text: &str, label: &Label) -> Result<CompositeText, PromptError> {
    if text.is_empty() {
        return Err(PromptError::EmptyText);
    }
    Ok(CompositeText(format!("{text} has {label} label")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub conditioning_text: String,
    pub query_text: String,
    pub task_noun: String,
    pub language: String,
}

const EN_CONDITIONING: &str = "I will give you a text that has been labelled with a {task}. \
I want you to return only one sentence explaining why this text has been labelled with this {task}. \
Do not write anything other than the sentence explaining the {task}.";
const EN_QUERY: &str = "The text: {input_text} is labelled with the following {task} {label}. \
Write a sentence explaining why the text is labelled with the {task}.";

const EL_CONDITIONING: &str = "Θα σου δώσω ένα κείμενο το οποίο έχει χαρακτηριστεί με ένα {task}. \
Θέλω να μου επιστρέψει μια πρόταση μόνο που να επεξηγεί τον λόγο για τον οποίο το κείμενο αυτό \
να χαρακτηριστεί με το {task} αυτό. Μην γράψεις τίποτα άλλο πέρα από την πρόταση που να επεξηγεί το {task}.";
const EL_QUERY: &str = "Το κείμενο: {input_text} έχει χαρακτηριστεί με το ακόλουθο {task} {label}. \
Γράψε μου μια πρόταση που να εξηγεί γιατι το κείμενο χαρακτηρίστηκε με το {task}.";

/// Built-in template presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    SentimentEn,
    SentimentEl,
    OffensiveEn,
    OffensiveEl,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::SentimentEn,
        Preset::SentimentEl,
        Preset::OffensiveEn,
        Preset::OffensiveEl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SentimentEn => "sentiment-en",
            Preset::SentimentEl => "sentiment-el",
            Preset::OffensiveEn => "offensive-en",
            Preset::OffensiveEl => "offensive-el",
        }
    }

    pub fn from_name(name: &str) -> Result<Preset, PromptError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| PromptError::UnknownPreset(name.to_string()))
    }

    pub fn template(self) -> PromptTemplate {
        // The offensive-language wording differs only in the task noun.
        let (conditioning, query, language, noun) = match self {
            Preset::SentimentEn => (EN_CONDITIONING, EN_QUERY, "en", "sentiment"),
            Preset::SentimentEl => (EL_CONDITIONING, EL_QUERY, "el", "sentiment"),
            Preset::OffensiveEn => (EN_CONDITIONING, EN_QUERY, "en", "label"),
            Preset::OffensiveEl => (EL_CONDITIONING, EL_QUERY, "el", "label"),
        };
        PromptTemplate::with_task_noun(self.name(), conditioning, query, noun, language)
    }
}

impl PromptTemplate {
    /// Builds a template from patterns that may mention `{task}`; every
    /// `{task}` is replaced by `task_noun` once, at construction.
    pub fn with_task_noun(
        name: &str,
        conditioning_pattern: &str,
        query_pattern: &str,
        task_noun: &str,
        language: &str,
    ) -> PromptTemplate {
        PromptTemplate {
            name: name.to_string(),
            conditioning_text: conditioning_pattern.replace("{task}", task_noun),
            query_text: query_pattern.replace("{task}", task_noun),
            task_noun: task_noun.to_string(),
            language: language.to_string(),
        }
    }

    pub fn preset(name: &str) -> Result<PromptTemplate, PromptError> {
        Ok(Preset::from_name(name)?.template())
    }

    /// Parses a template JSON document and validates it.
    pub fn from_json(doc: &str) -> Result<PromptTemplate, PromptError> {
        let tpl: PromptTemplate = serde_json::from_str(doc).map_err(|e| PromptError::Parse(e.to_string()))?;
        tpl.validate()?;
        Ok(tpl)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes")
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.conditioning_text.trim().is_empty() {
            return Err(PromptError::EmptyConditioning);
        }
        for placeholder in [INPUT_TEXT_PLACEHOLDER, LABEL_PLACEHOLDER] {
            let count = self.query_text.matches(placeholder).count();
            if count != 1 {
                return Err(PromptError::Placeholder { placeholder, count });
            }
        }
        Ok(())
    }

    /// SHA-256 over every field, length-prefixed, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for field in [
            &self.name,
            &self.conditioning_text,
            &self.query_text,
            &self.task_noun,
            &self.language,
        ] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

pub fn render_conditioning(tpl: &PromptTemplate) -> Result<String, PromptError> {
    tpl.validate()?;
    Ok(tpl.conditioning_text.clone())
}

/// Substitutes both placeholders in one pass, so placeholder-like text
/// inside the input is never expanded.
pub fn render_query(tpl: &PromptTemplate, text: &str, label: &Label) -> Result<String, PromptError> {
    tpl.validate()?;
    let query = &tpl.query_text;
    let text_at = query.find(INPUT_TEXT_PLACEHOLDER).expect("validated");
    let label_at = query.find(LABEL_PLACEHOLDER).expect("validated");
    let mut slots = [
        (text_at, INPUT_TEXT_PLACEHOLDER.len(), text),
        (label_at, LABEL_PLACEHOLDER.len(), label.as_str()),
    ];
    slots.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(query.len() + text.len() + label.as_str().len());
    let mut cursor = 0;
    for (at, len, value) in slots {
        out.push_str(&query[cursor..at]);
        out.push_str(value);
        cursor = at + len;
    }
    out.push_str(&query[cursor..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_examples() {
        let c = build_composite("Great result today", &"Positive".into()).unwrap();
        assert_eq!(c.as_str(), "Great result today has Positive label");
        assert_eq!(
            build_composite("x", &"Neutral".into()).unwrap().as_str(),
            "x has Neutral label"
        );
        let c = build_composite("she has doubts", &"Negative".into()).unwrap();
        assert_eq!(c.as_str(), "she has doubts has Negative label");
        assert_eq!(c.split(), Some(("she has doubts", "Negative")));
    }

    #[test]
    fn composite_rejects_empty_text() {
        assert_eq!(build_composite("", &"A".into()), Err(PromptError::EmptyText));
    }

    #[test]
    fn split_handles_multi_word_labels_and_garbage() {
        let c = build_composite("ok", &"Not Offensive".into()).unwrap();
        assert_eq!(c.split(), Some(("ok", "Not Offensive")));
        assert_eq!(CompositeText::from_raw("no suffix here").split(), None);
    }

    #[test]
    fn default_sentiment_query() {
        let tpl = Preset::SentimentEn.template();
        let q = render_query(&tpl, "T", &"Neutral".into()).unwrap();
        assert_eq!(
            q,
            "The text: T is labelled with the following sentiment Neutral. \
             Write a sentence explaining why the text is labelled with the sentiment."
        );
    }

    #[test]
    fn default_conditioning_verbatim() {
        let tpl = Preset::SentimentEn.template();
        assert_eq!(
            render_conditioning(&tpl).unwrap(),
            "I will give you a text that has been labelled with a sentiment. \
             I want you to return only one sentence explaining why this text has been labelled \
             with this sentiment. Do not write anything other than the sentence explaining the sentiment."
        );
    }

    #[test]
    fn greek_presets_render() {
        let tpl = Preset::SentimentEl.template();
        let q = render_query(&tpl, "Εκλογές 2015", &"Neutral".into()).unwrap();
        assert!(q.starts_with("Το κείμενο: Εκλογές 2015 έχει χαρακτηριστεί με το ακόλουθο sentiment Neutral."));
        assert!(render_conditioning(&tpl)
            .unwrap()
            .starts_with("Θα σου δώσω ένα κείμενο"));
    }

    #[test]
    fn offensive_label_appears_once() {
        let tpl = Preset::OffensiveEn.template();
        assert_eq!(tpl.task_noun, "label");
        let q = render_query(&tpl, "T", &"Offensive".into()).unwrap();
        assert_eq!(q.matches("Offensive").count(), 1);
        assert!(q.contains("following label Offensive."));
    }

    #[test]
    fn missing_placeholder_rejected() {
        let mut tpl = Preset::SentimentEn.template();
        tpl.query_text = "Why is {input_text} labelled?".into();
        assert_eq!(
            tpl.validate(),
            Err(PromptError::Placeholder {
                placeholder: LABEL_PLACEHOLDER,
                count: 0
            })
        );
        assert!(render_query(&tpl, "T", &"A".into()).is_err());
        tpl.query_text = "{input_text} {label} {label}".into();
        assert!(tpl.validate().is_err());
    }

    #[test]
    fn conditioning_identity_and_empty() {
        let mut tpl = Preset::SentimentEn.template();
        tpl.conditioning_text = "X".into();
        assert_eq!(render_conditioning(&tpl).unwrap(), "X");
        tpl.conditioning_text = String::new();
        assert_eq!(render_conditioning(&tpl), Err(PromptError::EmptyConditioning));
    }

    #[test]
    fn placeholder_text_in_input_is_not_expanded() {
        let tpl = Preset::SentimentEn.template();
        let q = render_query(&tpl, "say {label}", &"Neutral".into()).unwrap();
        assert!(q.starts_with("The text: say {label} is labelled"));
    }

    #[test]
    fn template_json_round_trip_and_fingerprint() {
        let tpl = Preset::OffensiveEl.template();
        let back = PromptTemplate::from_json(&tpl.to_json()).unwrap();
        assert_eq!(back, tpl);
        assert_eq!(back.fingerprint(), tpl.fingerprint());
        let mut changed = tpl.clone();
        changed.query_text.push(' ');
        assert_ne!(changed.fingerprint(), tpl.fingerprint());
        assert!(PromptTemplate::preset("nope").is_err());
    }
}
