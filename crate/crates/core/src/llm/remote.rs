//! Chat-completion client over blocking HTTP.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, BackendConfig, CallTag, ChatExchange, Completion, LlmError, RetryPolicy};

pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: String,
    retry: RetryPolicy,
    max_in_flight: usize,
}

enum Failure {
    Fatal(LlmError),
    Transient { message: String, timeout: bool },
}

/// `treevo-<kind>-<index>-<attempt>`, stable across HTTP retries of one call.
pub fn request_id(tag: CallTag) -> String {
    format!("treevo-{}-{}-{}", tag.kind.name(), tag.index, tag.attempt)
}

impl RemoteBackend {
    /// Reads the bearer token from the configured environment variable.
    pub fn from_config(config: &BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| LlmError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend {
            agent,
            endpoint: config.endpoint.clone().expect("validated"),
            model: config.model.clone().expect("validated"),
            api_key,
            retry: config.retry.clone(),
            max_in_flight: config.max_in_flight,
        })
    }

    /// One HTTP attempt. Retries of a call reuse its request id.
    fn request(&self, tag: CallTag, exchange: &ChatExchange) -> Result<String, Failure> {
        let body = json!({
            "model": self.model,
            "temperature": exchange.temperature,
            "messages": [
                {"role": "system", "content": exchange.system_text},
                {"role": "user", "content": exchange.user_text},
            ],
        });
        let sent = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .header("X-Request-Id", &request_id(tag))
            .send(body.to_string());
        let mut resp = match sent {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(Failure::Transient {
                    message: "timeout".into(),
                    timeout: true,
                })
            }
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Err(Failure::Transient {
                    message: "timeout".into(),
                    timeout: true,
                })
            }
            Err(e) => {
                return Err(Failure::Transient {
                    message: self.scrub(&e.to_string()),
                    timeout: false,
                })
            }
        };
        let status = resp.status().as_u16();
        if status == 401 || status == 403 {
            return Err(Failure::Fatal(LlmError::Auth { status }));
        }
        if status == 429 || status >= 500 {
            return Err(Failure::Transient {
                message: format!("HTTP {status}"),
                timeout: false,
            });
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(LlmError::ExhaustedRetries {
                attempts: 1,
                last: format!("HTTP {status}"),
            }));
        }
        let text = resp.body_mut().read_to_string().map_err(|e| Failure::Transient {
            message: format!("reading body: {e}"),
            timeout: false,
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Failure::Transient {
            message: format!("malformed response: {e}"),
            timeout: false,
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Failure::Transient {
                message: "response has no choices[0].message.content".into(),
                timeout: false,
            })
    }
}

impl Backend for RemoteBackend {
    fn complete(&self, tag: CallTag, exchange: &ChatExchange) -> Result<Completion, LlmError> {
        exchange.validate()?;
        let started = Instant::now();
        let mut last = String::new();
        let mut timed_out = false;
        for attempt in 1..=self.retry.attempts {
            match self.request(tag, exchange) {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        http_attempts: attempt,
                    })
                }
                Err(Failure::Fatal(LlmError::ExhaustedRetries { last, .. })) => {
                    return Err(LlmError::ExhaustedRetries { attempts: attempt, last })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient { message, timeout }) => {
                    log::debug!("attempt {attempt} failed: {message}");
                    last = message;
                    timed_out = timeout;
                    if attempt < self.retry.attempts {
                        std::thread::sleep(self.retry.backoff(attempt));
                    }
                }
            }
        }
        let attempts = self.retry.attempts;
        Err(if timed_out {
            LlmError::Timeout { attempts }
        } else {
            LlmError::ExhaustedRetries { attempts, last }
        })
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn scrub(&self, text: &str) -> String {
        text.replace(&self.api_key, "[redacted]")
    }
}
