//! Text-generation backends and extraction of trees and expressions from their output.
//!
//! Two backends implement [`Backend`]: [`remote::RemoteBackend`] speaks the
//! chat-completion wire format over HTTP, and [`mock::MockBackend`] answers
//! from a script, falling back to the deterministic [`synthetic::SyntheticResponder`].

pub mod extract;
pub mod mock;
pub mod prompts;
pub mod remote;
pub mod synthetic;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_expression, extract_tree, ExtractError};
pub use mock::{MockBackend, MockScript};
pub use prompts::PromptTemplates;
pub use remote::RemoteBackend;

pub const MAX_EXCHANGE_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Init,
    Crossover,
    Mutation,
    Pruning,
    Flat,
    Grounding,
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::Init,
        PromptKind::Crossover,
        PromptKind::Mutation,
        PromptKind::Pruning,
        PromptKind::Flat,
        PromptKind::Grounding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Init => "init",
            PromptKind::Crossover => "crossover",
            PromptKind::Mutation => "mutation",
            PromptKind::Pruning => "pruning",
            PromptKind::Flat => "flat",
            PromptKind::Grounding => "grounding",
        }
    }
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown prompt kind `{s}`"))
    }
}

/// Identifies one call: `index` is the per-kind slot counter assigned by the
/// caller before any concurrency, `attempt` the regeneration number within the slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallTag {
    pub kind: PromptKind,
    pub index: u64,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatExchange {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    /// Regenerations allowed when the output cannot be used.
    pub max_attempts: u32,
}

impl ChatExchange {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>, temperature: f64, max_attempts: u32) -> Self {
        ChatExchange {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature,
            max_attempts,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.system_text.trim().is_empty() || self.user_text.trim().is_empty() {
            return Err(LlmError::Config("prompts must be non-empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if self.max_attempts == 0 || self.max_attempts > MAX_EXCHANGE_ATTEMPTS {
            return Err(LlmError::Config(format!(
                "max_attempts must be in 1..={MAX_EXCHANGE_ATTEMPTS}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
    /// HTTP requests issued, retries included. 1 for the mock.
    pub http_attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("authentication failed (HTTP {status})")]
    Auth { status: u16 },
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("no scripted response for {kind} #{index} attempt {attempt}")]
    Unscripted { kind: PromptKind, index: u64, attempt: u32 },
}

impl LlmError {
    /// Errors that end the run rather than one offspring slot.
    pub fn is_fatal(&self) -> bool {
        matches!(self, LlmError::Auth { .. } | LlmError::Config(_))
    }

    pub fn http_attempts(&self) -> u32 {
        match self {
            LlmError::ExhaustedRetries { attempts, .. } | LlmError::Timeout { attempts } => *attempts,
            LlmError::Auth { .. } => 1,
            _ => 0,
        }
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, tag: CallTag, exchange: &ChatExchange) -> Result<Completion, LlmError>;

    /// Concurrent requests the caller may keep in flight.
    fn max_in_flight(&self) -> usize {
        1
    }

    /// Removes secrets from text before it is logged.
    fn scrub(&self, text: &str) -> String {
        text.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend `{other}` (remote, mock)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base * 2^(retry-1).
    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << (retry.saturating_sub(1)).min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of the chat-completion endpoint, e.g. `https://host/v1/chat/completions`.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Response script for the mock backend.
    pub script: Option<std::path::PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            api_key_env: "TREEVO_API_KEY".into(),
            timeout_secs: 60,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            script: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be positive".into()));
        }
        if self.kind == BackendKind::Remote {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(LlmError::Config("remote backend requires an endpoint".into()));
            }
            if self.model.as_deref().is_none_or(str::is_empty) {
                return Err(LlmError::Config("remote backend requires a model".into()));
            }
            if self.retry.attempts == 0 {
                return Err(LlmError::Config("retry.attempts must be positive".into()));
            }
            if self.timeout_secs == 0 {
                return Err(LlmError::Config("timeout_secs must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Builds the configured backend. The remote credential is read here, so a
/// missing variable fails before any evaluation.
pub fn build_backend(config: &BackendConfig, seed: u64) -> Result<Box<dyn Backend>, LlmError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Remote => Box::new(RemoteBackend::from_config(config)?),
        BackendKind::Mock => {
            let script = match &config.script {
                Some(path) => MockScript::load(path).map_err(|e| LlmError::Config(e.to_string()))?,
                None => MockScript::default(),
            };
            Box::new(MockBackend::new(script, seed).with_max_in_flight(config.max_in_flight))
        }
    })
}
