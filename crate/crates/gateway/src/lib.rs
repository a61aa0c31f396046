//! Command-line front end and HTTP service for the explainpipe pipeline.
//!
//! The CLI drives corpus preparation, rationale generation, batch runs and
//! the rating study; the HTTP service serves the study to a rater UI.

pub mod commands;
pub mod config;
pub mod server;

pub use config::AppConfig;
pub use server::{router, serve, AppState};

/// Error category for machine-readable CLI errors, from the innermost known
/// error in the chain.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    use explainpipe_core::*;
    for cause in err.chain() {
        if cause.is::<CorpusError>() {
            return "dataset";
        }
        if cause.is::<StudyError>() {
            return match cause.downcast_ref::<StudyError>() {
                Some(StudyError::ZeroRatings) => "zero_ratings",
                _ => "study",
            };
        }
        if cause.is::<PromptError>() {
            return "template";
        }
        if cause.is::<RationaleError>() {
            return "rationales";
        }
        if cause.is::<PipelineError>() {
            return "pipeline";
        }
        if cause.is::<MetricsError>() {
            return "metrics";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

/// The `{"error": {...}}` document written to stderr on failure.
pub fn error_json(err: &anyhow::Error) -> serde_json::Value {
    serde_json::json!({
        "error": {
            "kind": error_kind(err),
            "message": format!("{err:#}"),
        }
    })
}
