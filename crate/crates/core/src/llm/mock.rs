//! Scripted backend. Responses are keyed by (prompt kind, call index, attempt),
//! so concurrent callers get the same transcript as a serial run.
//!
//! Script files are TOML:
//!
//! ```toml
//! fallback = "synthetic"   # or "fail"
//!
//! [[response]]
//! kind = "init"
//! index = 0
//! text = '''
//! ```json
//! {"children":[],"label":"Use the close series"}
//! ```
//! '''
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::runlog::LogRecord;

use super::synthetic::SyntheticResponder;
use super::{Backend, CallTag, ChatExchange, Completion, LlmError, PromptKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Answer unscripted calls with the deterministic synthetic responder.
    #[default]
    Synthetic,
    /// Treat unscripted calls as errors.
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub kind: PromptKind,
    pub index: u64,
    #[serde(default)]
    pub attempt: u32,
    #[serde(default)]
    pub text: String,
    /// When set, the call fails with this message instead of answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub fallback: Fallback,
    #[serde(default, rename = "response")]
    pub responses: Vec<ScriptEntry>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("reading script: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing script: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("duplicate script entry for {kind} #{index} attempt {attempt}")]
    Duplicate { kind: PromptKind, index: u64, attempt: u32 },
}

impl MockScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, ScriptError> {
        let s: MockScript = toml::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scripts serialize")
    }

    fn check(&self) -> Result<(), ScriptError> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.responses {
            if !seen.insert((e.kind, e.index, e.attempt)) {
                return Err(ScriptError::Duplicate {
                    kind: e.kind,
                    index: e.index,
                    attempt: e.attempt,
                });
            }
        }
        Ok(())
    }

    pub fn push(&mut self, kind: PromptKind, index: u64, attempt: u32, text: impl Into<String>) -> &mut Self {
        self.responses.push(ScriptEntry {
            kind,
            index,
            attempt,
            text: text.into(),
            fail: None,
        });
        self
    }

    /// A script that replays every logged call, failures included.
    pub fn from_log(records: &[LogRecord]) -> Self {
        let mut s = MockScript {
            fallback: Fallback::Fail,
            responses: Vec::new(),
        };
        for r in records {
            if let LogRecord::LlmCall(c) = r {
                let Ok(kind) = c.kind.parse() else { continue };
                s.responses.push(ScriptEntry {
                    kind,
                    index: c.index,
                    attempt: c.attempt,
                    text: c.response.clone().unwrap_or_default(),
                    fail: c.error.clone(),
                });
            }
        }
        s
    }
}

pub struct MockBackend {
    entries: HashMap<(PromptKind, u64, u32), ScriptEntry>,
    fallback: Fallback,
    responder: SyntheticResponder,
    max_in_flight: usize,
}

impl MockBackend {
    pub fn new(script: MockScript, seed: u64) -> Self {
        MockBackend {
            entries: script
                .responses
                .into_iter()
                .map(|e| ((e.kind, e.index, e.attempt), e))
                .collect(),
            fallback: script.fallback,
            responder: SyntheticResponder::new(seed),
            max_in_flight: 4,
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn with_responder(mut self, responder: SyntheticResponder) -> Self {
        self.responder = responder;
        self
    }
}

impl Backend for MockBackend {
    fn complete(&self, tag: CallTag, exchange: &ChatExchange) -> Result<Completion, LlmError> {
        exchange.validate()?;
        let text = match self.entries.get(&(tag.kind, tag.index, tag.attempt)) {
            Some(ScriptEntry { fail: Some(msg), .. }) => {
                return Err(LlmError::ExhaustedRetries {
                    attempts: 1,
                    last: msg.clone(),
                })
            }
            Some(e) => e.text.clone(),
            None => match self.fallback {
                Fallback::Synthetic => self.responder.respond(tag, exchange),
                Fallback::Fail => {
                    return Err(LlmError::Unscripted {
                        kind: tag.kind,
                        index: tag.index,
                        attempt: tag.attempt,
                    })
                }
            },
        };
        // latency is reported as zero so transcripts are byte-identical
        Ok(Completion {
            text,
            latency_ms: 0,
            http_attempts: 1,
        })
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex() -> ChatExchange {
        ChatExchange::new("sys", "task: init\nhello", 1.0, 3)
    }

    #[test]
    fn scripted_response_at_index() {
        let mut s = MockScript::default();
        s.push(PromptKind::Init, 0, 0, "R");
        let b = MockBackend::new(s, 0);
        let tag = CallTag {
            kind: PromptKind::Init,
            index: 0,
            attempt: 0,
        };
        assert_eq!(b.complete(tag, &ex()).unwrap().text, "R");
        let other = CallTag { index: 1, ..tag };
        let a = b.complete(other, &ex()).unwrap().text;
        assert_eq!(a, b.complete(other, &ex()).unwrap().text);
    }

    #[test]
    fn toml_round_trip_and_fail_fallback() {
        let text = "fallback = \"fail\"\n[[response]]\nkind = \"mutation\"\nindex = 2\ntext = '''\nhi\n'''\n";
        let s = MockScript::from_toml(text).unwrap();
        assert_eq!(s.responses[0].attempt, 0);
        assert_eq!(MockScript::from_toml(&s.to_toml()).unwrap(), s);
        let b = MockBackend::new(s, 0);
        let tag = CallTag {
            kind: PromptKind::Mutation,
            index: 3,
            attempt: 0,
        };
        assert!(matches!(b.complete(tag, &ex()), Err(LlmError::Unscripted { .. })));
    }

    #[test]
    fn duplicate_entries_rejected() {
        let text = "[[response]]\nkind = \"init\"\nindex = 0\ntext = \"a\"\n[[response]]\nkind = \"init\"\nindex = 0\ntext = \"b\"\n";
        assert!(matches!(MockScript::from_toml(text), Err(ScriptError::Duplicate { .. })));
    }
}
