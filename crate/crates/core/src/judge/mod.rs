//! Protocol clients for external model services (error-counting judge,
//! temporal labeler, token embedder, generation backend) plus a
//! deterministic in-process mock server speaking the same wire protocol.
//!
//! The wire protocol is JSON over HTTP, one POST route per capability:
//! `/judge/errors`, `/judge/temporal`, `/embed`, `/generate`. A heavier
//! deployment can host real scoring models behind these routes without
//! touching anything else in this crate.

pub mod client;
mod http;
pub mod mock;
pub mod server;

pub use client::{HttpBackend, HttpEmbedder, HttpJudge};
pub use mock::{MockBackend, MockEmbedder, MockJudge};
pub use server::MockServer;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::PromptInstance;

/// Errors raised by judge/embedder/backend calls.
#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("reference report is empty")]
    EmptyReference,
    #[error("transient failure persisted after {attempts} attempts: {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("permanent service failure (status {status}): {message}")]
    Permanent { status: u16, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("temperature {temperature} > 0 requires a seed")]
    MissingSeed { temperature: f64 },
    #[error("backend failure: {0}")]
    Backend(String),
}

impl JudgeError {
    /// Permanent failures should not be retried and map to the CLI's
    /// remote-failure exit code.
    pub fn is_permanent(&self) -> bool {
        !matches!(self, JudgeError::Exhausted { .. })
    }
}

/// Outcome of an error-counting judge call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub error_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Temporal relation of a study to its prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalCategory {
    FirstStudy,
    NewDevelopment,
    NoChange,
    Progression,
    Regression,
}

impl TemporalCategory {
    pub fn label(self) -> &'static str {
        match self {
            TemporalCategory::FirstStudy => "first_study",
            TemporalCategory::NewDevelopment => "new_development",
            TemporalCategory::NoChange => "no_change",
            TemporalCategory::Progression => "progression",
            TemporalCategory::Regression => "regression",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "first_study" => Some(TemporalCategory::FirstStudy),
            "new_development" => Some(TemporalCategory::NewDevelopment),
            "no_change" => Some(TemporalCategory::NoChange),
            "progression" => Some(TemporalCategory::Progression),
            "regression" => Some(TemporalCategory::Regression),
            _ => None,
        }
    }
}

/// Connection settings for one remote capability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceEndpoint {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
    /// Free-form instruction text forwarded to real judge backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

fn default_timeout_ms() -> u64 {
    10_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    8
}
fn default_backoff_ms() -> u64 {
    200
}

impl ServiceEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        ServiceEndpoint {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            backoff_base_ms: default_backoff_ms(),
            bearer_token: None,
            instruction: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// `max_in_flight` must be at least 1.
    pub fn effective_in_flight(&self) -> usize {
        self.max_in_flight.max(1)
    }
}

/// Error-counting and temporal-labeling judge.
pub trait ReportJudge: Send + Sync {
    /// Count clinical errors in `candidate` relative to `reference`. The
    /// reference must be non-empty.
    fn count_errors(&self, candidate: &str, reference: &str) -> Result<JudgeVerdict, JudgeError>;

    /// Classify the temporal relation of `current` to `prior`. An absent
    /// prior is `FirstStudy` and must not trigger any service call.
    fn label_temporal(
        &self,
        current: &str,
        prior: Option<&str>,
    ) -> Result<TemporalCategory, JudgeError>;
}

impl<J: ReportJudge + ?Sized> ReportJudge for Box<J> {
    fn count_errors(&self, candidate: &str, reference: &str) -> Result<JudgeVerdict, JudgeError> {
        (**self).count_errors(candidate, reference)
    }

    fn label_temporal(
        &self,
        current: &str,
        prior: Option<&str>,
    ) -> Result<TemporalCategory, JudgeError> {
        (**self).label_temporal(current, prior)
    }
}

/// One generation result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub truncated: bool,
}

/// Text generation backend.
pub trait TextBackend: Send + Sync {
    /// Generate a report for `prompt`. Temperature 0 must be deterministic
    /// greedy decoding; temperature > 0 requires a seed. Output longer than
    /// `max_tokens` is truncated and flagged.
    fn generate(
        &self,
        prompt: &PromptInstance,
        temperature: f64,
        seed: Option<u64>,
        max_tokens: usize,
    ) -> Result<Generation, JudgeError>;
}

// Wire types for the four routes.

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorsRequest {
    pub candidate: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TemporalRequest {
    pub current: String,
    pub prior: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TemporalResponse {
    pub category: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub tokens: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub images: Vec<String>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_tokens: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhausted_is_the_only_retryable_failure() {
        let transient = JudgeError::Exhausted {
            attempts: 3,
            message: "timeout".into(),
        };
        assert!(!transient.is_permanent());
        assert!(JudgeError::Permanent {
            status: 404,
            message: "gone".into()
        }
        .is_permanent());
        assert!(JudgeError::MalformedResponse("bad".into()).is_permanent());
        assert!(JudgeError::EmptyReference.is_permanent());
    }

    #[test]
    fn temporal_labels_round_trip() {
        for category in [
            TemporalCategory::FirstStudy,
            TemporalCategory::NewDevelopment,
            TemporalCategory::NoChange,
            TemporalCategory::Progression,
            TemporalCategory::Regression,
        ] {
            assert_eq!(
                TemporalCategory::from_label(category.label()),
                Some(category)
            );
        }
        assert_eq!(TemporalCategory::from_label("sideways"), None);
    }
}
