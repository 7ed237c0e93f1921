//! Chat-completion client with retry, backoff and global request pacing.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    approx_tokens, Clock, CompletionProvider, CompletionRequest, CompletionResult, PromptBundle,
    ProviderConfig, ProviderError, RateLimiter, SystemClock, UsageMeter, UsageRecord,
};

pub const API_KEY_ENV: &str = "ANNOGATE_API_KEY";

/// Request body sent to `{endpoint_url}/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatRequest {
    pub fn new(config: &ProviderConfig, bundle: &PromptBundle) -> Self {
        ChatRequest {
            model: config.model_name.clone(),
            temperature: config.temperature,
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: bundle.system_text.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: bundle.user_text.clone(),
                },
            ],
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<ResponseUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ResponseUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// Outcome of a single HTTP attempt.
enum Attempt {
    Done(ChatResponse),
    Retry {
        error: ProviderError,
        retry_after: Option<Duration>,
    },
    Fail(ProviderError),
}

/// Provider backed by an OpenAI-compatible HTTP endpoint.
///
/// Cloning shares the rate limiter and usage meter, so the
/// `requests_per_minute` ceiling holds across every clone and thread.
#[derive(Clone)]
pub struct HttpProvider {
    config: ProviderConfig,
    url: String,
    api_key: String,
    agent: ureq::Agent,
    limiter: Arc<RateLimiter>,
    usage: Arc<UsageMeter>,
}

impl HttpProvider {
    /// Reads the API key from `ANNOGATE_API_KEY`.
    pub fn from_env(config: ProviderConfig) -> Result<Self, ProviderError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(ProviderError::MissingApiKey(API_KEY_ENV))?;
        HttpProvider::new(config, key)
    }

    pub fn new(config: ProviderConfig, api_key: impl Into<String>) -> Result<Self, ProviderError> {
        HttpProvider::with_clock(config, api_key, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(
        config: ProviderConfig,
        api_key: impl Into<String>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ProviderError> {
        let limiter = RateLimiter::new(config.requests_per_minute, clock);
        HttpProvider::with_limiter(config, api_key, Arc::new(limiter))
    }

    pub fn with_limiter(
        config: ProviderConfig,
        api_key: impl Into<String>,
        limiter: Arc<RateLimiter>,
    ) -> Result<Self, ProviderError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!(
            "{}/chat/completions",
            config.endpoint_url.trim_end_matches('/')
        );
        Ok(HttpProvider {
            config,
            url,
            api_key: api_key.into(),
            agent,
            limiter,
            usage: Arc::new(UsageMeter::default()),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn limiter(&self) -> &Arc<RateLimiter> {
        &self.limiter
    }

    /// Usage accumulated over successful completions, priced with this
    /// provider's configuration.
    pub fn usage(&self) -> UsageRecord {
        self.usage.snapshot().priced(&self.config)
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exponential = self
            .config
            .initial_backoff
            .saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX));
        retry_after
            .unwrap_or(exponential)
            .min(self.config.max_backoff)
    }

    fn attempt(&self, body: &[u8], attempts: u32) -> Attempt {
        let response = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry {
                    error: ProviderError::Timeout { attempts },
                    retry_after: None,
                }
            }
            Err(e) => {
                return Attempt::Retry {
                    error: ProviderError::Transport {
                        attempts,
                        message: e.to_string(),
                    },
                    retry_after: None,
                }
            }
        };
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .and_then(|secs| Duration::try_from_secs_f64(secs).ok());
        let text = match response.body_mut().read_to_string() {
            Ok(text) => text,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry {
                    error: ProviderError::Timeout { attempts },
                    retry_after: None,
                }
            }
            Err(e) => return Attempt::Fail(ProviderError::MalformedResponse(e.to_string())),
        };
        match status {
            200..=299 => match serde_json::from_str::<ChatResponse>(&text) {
                Ok(parsed) => Attempt::Done(parsed),
                Err(e) => Attempt::Fail(ProviderError::MalformedResponse(e.to_string())),
            },
            401 | 403 => Attempt::Fail(ProviderError::AuthError { status }),
            429 => Attempt::Retry {
                error: ProviderError::RateLimitedExhausted { attempts },
                retry_after,
            },
            500..=599 => Attempt::Retry {
                error: ProviderError::EndpointError { status, body: text },
                retry_after,
            },
            _ => Attempt::Fail(ProviderError::EndpointError { status, body: text }),
        }
    }
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, ProviderError> {
        let started = Instant::now();
        let body = serde_json::to_vec(&ChatRequest::new(&self.config, request.bundle))
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;

        let mut attempts = 0;
        loop {
            attempts += 1;
            self.limiter.acquire();
            let (error, retry_after) = match self.attempt(&body, attempts) {
                Attempt::Done(parsed) => {
                    let content = parsed
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .ok_or_else(|| {
                            ProviderError::MalformedResponse("no choices[0].message.content".into())
                        })?;
                    let usage = parsed.usage.as_ref();
                    let input_tokens = usage.and_then(|u| u.prompt_tokens).unwrap_or_else(|| {
                        approx_tokens(&request.bundle.system_text)
                            + approx_tokens(&request.bundle.user_text)
                    });
                    let output_tokens = usage
                        .and_then(|u| u.completion_tokens)
                        .unwrap_or_else(|| approx_tokens(&content));
                    let result = CompletionResult {
                        text: content,
                        input_tokens,
                        output_tokens,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempts,
                    };
                    self.usage.record(&result);
                    return Ok(result);
                }
                Attempt::Fail(error) => return Err(error),
                Attempt::Retry { error, retry_after } => (error, retry_after),
            };
            if attempts > self.config.max_retries {
                return Err(error);
            }
            self.limiter
                .clock()
                .sleep(self.backoff(attempts - 1, retry_after));
        }
    }

    fn describe(&self) -> String {
        format!("http:{}", self.config.model_name)
    }
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("url", &self.url)
            .field("model", &self.config.model_name)
            .finish_non_exhaustive()
    }
}
