//! Prompt rendering, completion providers and response parsing.
//!
//! A provider turns a [`PromptBundle`] into completion text. [`HttpProvider`]
//! talks to an OpenAI-style chat-completion endpoint; [`ScriptedProvider`] and
//! [`SimulatedProvider`] are offline and deterministic, keyed by sample and
//! pass rather than call order.

mod clock;
mod http;
mod parse;
mod prompt;
mod scripted;
mod simulate;
mod usage;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use clock::{Clock, FakeClock, RateLimiter, SystemClock};
pub use http::{ChatMessage, ChatRequest, HttpProvider, API_KEY_ENV};
pub use parse::{parse_votes, LABELS_PREFIX};
pub use prompt::{escape_sample_text, extract_sample_text, render_prompt, unescape_sample_text};
pub use scripted::{ScriptEntry, ScriptedProvider};
pub use simulate::{simulate_completion, uniform_draw, SimulatedProvider};
pub use usage::{approx_tokens, estimate_cost, UsageMeter, UsageRecord, Usd};

/// Connection, pacing and pricing settings for a chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub requests_per_minute: u32,
    pub price_per_1k_input_tokens: Usd,
    pub price_per_1k_output_tokens: Usd,
    /// First retry delay; doubles per attempt up to `max_backoff`.
    #[serde(with = "duration_secs")]
    pub initial_backoff: Duration,
    #[serde(with = "duration_secs")]
    pub max_backoff: Duration,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4".into(),
            temperature: 0.6,
            timeout: Duration::from_secs(60),
            max_retries: 5,
            requests_per_minute: 60,
            price_per_1k_input_tokens: Usd::from_decimal("0.03").unwrap(),
            price_per_1k_output_tokens: Usd::from_decimal("0.06").unwrap(),
            initial_backoff: Duration::from_secs(1),
            max_backoff: Duration::from_secs(60),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let invalid = |msg: String| Err(ProviderError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.temperature) {
            return invalid(format!("temperature {} outside [0, 1]", self.temperature));
        }
        if self.requests_per_minute == 0 {
            return invalid("requests_per_minute must be at least 1".into());
        }
        if self.price_per_1k_input_tokens.is_negative()
            || self.price_per_1k_output_tokens.is_negative()
        {
            return invalid("prices must be non-negative".into());
        }
        Ok(())
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Rendered prompt for one sample under one codebook version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub codebook_version: u32,
    pub dimension_keys: Vec<String>,
}

impl PromptBundle {
    /// Hex SHA-256 over the two message texts; used as a fixture key.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.system_text.as_bytes());
        hasher.update([0u8]);
        hasher.update(self.user_text.as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// One completion request: which sample, which pass, what prompt.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub sample_id: &'a str,
    pub pass_index: u32,
    pub bundle: &'a PromptBundle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("rate limited after {attempts} attempts")]
    RateLimitedExhausted { attempts: u32 },
    #[error("endpoint returned HTTP {status}: {body}")]
    EndpointError { status: u16, body: String },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("endpoint rejected credentials (HTTP {status})")]
    AuthError { status: u16 },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(&'static str),
    #[error("no scripted completion for {0}")]
    ScriptMissing(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

impl ProviderError {
    /// Hard errors abort a run; everything else becomes invalid votes.
    pub fn is_hard(&self) -> bool {
        matches!(
            self,
            ProviderError::AuthError { .. }
                | ProviderError::MissingApiKey(_)
                | ProviderError::ScriptMissing(_)
                | ProviderError::InvalidConfig(_)
        )
    }
}

/// Source of completions. Implementations must be safe to call from several
/// worker threads at once.
pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, ProviderError>;

    /// Short description recorded in run manifests.
    fn describe(&self) -> String;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for &P {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, ProviderError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, ProviderError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}
